//! Runs the zero-shot diagnosis prompt over every (turn, note, medication)
//! cell and persists the raw prediction matrix, resumably.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, ItemKey};
use crate::gateway::{CallContext, CompletionRequest, Gateway, ProviderKind};
use crate::grid::{grid_hash, TurnConfig};
use crate::pool::map_bounded;
use crate::prompts::{diagnosis_prompt, DIAGNOSIS_PROMPT_TEMPLATE};
use crate::summarizer::Summary;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum PredictionStatus {
    Ok,
    Error { message: String },
}

/// One cell of the prediction matrix as persisted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPrediction {
    pub turn_id: u8,
    pub note_id: String,
    pub medication: String,
    /// Model output after whitespace trimming and removal of one trailing
    /// period; empty when the cell errored.
    pub text: String,
    #[serde(flatten)]
    pub status: PredictionStatus,
}

impl RawPrediction {
    pub fn is_ok(&self) -> bool {
        self.status == PredictionStatus::Ok
    }

    pub fn item(&self) -> ItemKey {
        ItemKey::new(self.note_id.clone(), self.medication.clone())
    }
}

/// What produced a matrix; persisted as the run manifest and checked on
/// resume so prediction files from different runs never mix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub provider: ProviderKind,
    pub model_name: String,
    pub grid_hash: String,
    pub corpus_hash: String,
    pub prompt_template: String,
}

/// Per-turn ok/error counts for the completion report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TurnCompletion {
    pub turn_id: u8,
    pub ok: usize,
    pub errors: usize,
}

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("medication must be non-empty")]
    EmptyMedication,
    #[error("summary length {summary} does not match turn {turn_id}'s configured length {expected}")]
    SummaryMismatch {
        turn_id: u8,
        summary: usize,
        expected: usize,
    },
    #[error("no summary for note {note_id} at length {target_length}")]
    MissingSummary {
        note_id: String,
        target_length: usize,
    },
    #[error("prediction store at {path} belongs to a different run: {detail}")]
    ProvenanceMismatch { path: String, detail: String },
    #[error("no prediction manifest at {0}; no predictions have been run here")]
    MissingManifest(String),
    #[error("failed to access {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: invalid prediction record: {source}")]
    Parse {
        path: String,
        line: usize,
        source: serde_json::Error,
    },
}

/// The complete set of predictions for a run.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrix {
    /// (turn_id, item) → prediction; complete over turns × items, error
    /// cells included.
    pub entries: BTreeMap<(u8, ItemKey), RawPrediction>,
    pub turns: Vec<u8>,
    pub provenance: Provenance,
}

impl PredictionMatrix {
    pub fn get(&self, turn_id: u8, item: &ItemKey) -> Option<&RawPrediction> {
        self.entries.get(&(turn_id, item.clone()))
    }

    /// Successful answers grouped for scoring: turn → item → text. Every
    /// turn appears, even if all its cells errored.
    pub fn ok_answers(&self) -> BTreeMap<u8, BTreeMap<ItemKey, String>> {
        let mut answers: BTreeMap<u8, BTreeMap<ItemKey, String>> = self
            .turns
            .iter()
            .map(|&turn_id| (turn_id, BTreeMap::new()))
            .collect();
        for ((turn_id, item), prediction) in &self.entries {
            if prediction.is_ok() {
                answers
                    .entry(*turn_id)
                    .or_default()
                    .insert(item.clone(), prediction.text.clone());
            }
        }
        answers
    }

    /// Ok/error counts per turn, in turn order.
    pub fn completion_report(&self) -> Vec<TurnCompletion> {
        let mut report: BTreeMap<u8, TurnCompletion> = self
            .turns
            .iter()
            .map(|&turn_id| {
                (
                    turn_id,
                    TurnCompletion {
                        turn_id,
                        ok: 0,
                        errors: 0,
                    },
                )
            })
            .collect();
        for ((turn_id, _), prediction) in &self.entries {
            let row = report.entry(*turn_id).or_insert(TurnCompletion {
                turn_id: *turn_id,
                ok: 0,
                errors: 0,
            });
            if prediction.is_ok() {
                row.ok += 1;
            } else {
                row.errors += 1;
            }
        }
        report.into_values().collect()
    }

    pub fn error_count(&self) -> usize {
        self.entries.values().filter(|p| !p.is_ok()).count()
    }
}

/// Strip surrounding whitespace and at most one trailing period, so "The
/// diagnosis is hypertension." scores the same as "hypertension".
fn clean_output(raw: &str) -> String {
    let trimmed = raw.trim();
    trimmed
        .strip_suffix('.')
        .map_or(trimmed, str::trim_end)
        .to_string()
}

/// Append-only persistence: one JSONL file per turn plus a manifest.
#[derive(Debug, Clone)]
pub struct PredictionStore {
    dir: PathBuf,
}

impl PredictionStore {
    pub fn create(dir: &Path) -> Result<PredictionStore, PredictorError> {
        std::fs::create_dir_all(dir).map_err(|source| PredictorError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        Ok(PredictionStore {
            dir: dir.to_path_buf(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn turn_path(&self, turn_id: u8) -> PathBuf {
        self.dir.join(format!("turn_{turn_id}.jsonl"))
    }

    fn manifest_path(&self) -> PathBuf {
        self.dir.join("manifest.json")
    }

    /// Load one turn's records; the file may not exist yet (empty turn), and
    /// later records supersede earlier ones (append-only updates).
    pub fn load_turn(&self, turn_id: u8) -> Result<BTreeMap<ItemKey, RawPrediction>, PredictorError> {
        let path = self.turn_path(turn_id);
        let file = match std::fs::File::open(&path) {
            Ok(file) => file,
            Err(err) if err.kind() == std::io::ErrorKind::NotFound => return Ok(BTreeMap::new()),
            Err(source) => {
                return Err(PredictorError::Io {
                    path: path.display().to_string(),
                    source,
                })
            }
        };
        let mut records = BTreeMap::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| PredictorError::Io {
                path: path.display().to_string(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let prediction: RawPrediction =
                serde_json::from_str(&line).map_err(|source| PredictorError::Parse {
                    path: path.display().to_string(),
                    line: idx + 1,
                    source,
                })?;
            records.insert(prediction.item(), prediction);
        }
        Ok(records)
    }

    /// Append records to their turn files, grouped per turn in input order.
    pub fn append(&self, predictions: &[RawPrediction]) -> Result<(), PredictorError> {
        let mut files: BTreeMap<u8, std::fs::File> = BTreeMap::new();
        for prediction in predictions {
            let path = self.turn_path(prediction.turn_id);
            let io_err = |source| PredictorError::Io {
                path: path.display().to_string(),
                source,
            };
            let file = match files.entry(prediction.turn_id) {
                Entry::Occupied(entry) => entry.into_mut(),
                Entry::Vacant(entry) => {
                    let file = std::fs::OpenOptions::new()
                        .create(true)
                        .append(true)
                        .open(&path)
                        .map_err(io_err)?;
                    entry.insert(file)
                }
            };
            let line = serde_json::to_string(prediction).expect("prediction serializes");
            writeln!(file, "{line}").map_err(io_err)?;
        }
        Ok(())
    }

    /// Reassemble the persisted matrix for the given turns without touching
    /// a gateway. Turns with no file on disk contribute no entries, so the
    /// caller can judge completeness against its own item set.
    pub fn load_matrix(&self, configs: &[TurnConfig]) -> Result<PredictionMatrix, PredictorError> {
        let provenance = self.load_manifest()?.ok_or_else(|| {
            PredictorError::MissingManifest(self.manifest_path().display().to_string())
        })?;
        let turns: Vec<u8> = configs.iter().map(|c| c.turn_id).collect();
        let mut entries = BTreeMap::new();
        for &turn_id in &turns {
            for (item, prediction) in self.load_turn(turn_id)? {
                entries.insert((turn_id, item), prediction);
            }
        }
        Ok(PredictionMatrix {
            entries,
            turns,
            provenance,
        })
    }

    pub fn load_manifest(&self) -> Result<Option<Provenance>, PredictorError> {
        let path = self.manifest_path();
        let text = match std::fs::read_to_string(&path) {
            Ok(text) => text,
            Err(err) if err.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(source) => {
                return Err(PredictorError::Io {
                    path: path.display().to_string(),
                    source,
                })
            }
        };
        let provenance = serde_json::from_str(&text).map_err(|source| PredictorError::Parse {
            path: path.display().to_string(),
            line: 1,
            source,
        })?;
        Ok(Some(provenance))
    }

    pub fn save_manifest(&self, provenance: &Provenance) -> Result<(), PredictorError> {
        let path = self.manifest_path();
        let mut body = serde_json::to_string_pretty(provenance).expect("manifest serializes");
        body.push('\n');
        std::fs::write(&path, body).map_err(|source| PredictorError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Decoding and fan-out settings for prediction calls.
#[derive(Debug, Clone)]
pub struct PredictorOptions {
    pub model_name: String,
    /// The prompt asks for a bare diagnosis name, so the cap is small.
    pub max_output_tokens: u32,
    pub workers: usize,
}

impl Default for PredictorOptions {
    fn default() -> Self {
        PredictorOptions {
            model_name: "default".to_string(),
            max_output_tokens: 64,
            workers: 4,
        }
    }
}

/// Predict one cell. Gateway failures are recorded in the cell's status, not
/// returned, so one bad call never aborts a matrix run.
pub fn predict_one(
    gateway: &Gateway,
    summary: &Summary,
    medication: &str,
    truth: &str,
    config: &TurnConfig,
    options: &PredictorOptions,
) -> Result<RawPrediction, PredictorError> {
    if medication.trim().is_empty() {
        return Err(PredictorError::EmptyMedication);
    }
    if summary.target_length != config.summary_length {
        return Err(PredictorError::SummaryMismatch {
            turn_id: config.turn_id,
            summary: summary.target_length,
            expected: config.summary_length,
        });
    }
    let request = CompletionRequest {
        model_name: options.model_name.clone(),
        prompt: diagnosis_prompt(&summary.text, medication),
        temperature: config.temperature,
        top_p: config.top_p,
        max_output_tokens: options.max_output_tokens,
    };
    let context = CallContext::Predict {
        turn_id: config.turn_id,
        item: ItemKey::new(summary.note_id.clone(), medication.to_string()),
        truth: truth.to_string(),
    };
    let (text, status) = match gateway.complete(&request, &context) {
        Ok(response) => {
            let text = clean_output(&response.text);
            if text.is_empty() {
                (
                    String::new(),
                    PredictionStatus::Error {
                        message: "empty model output".to_string(),
                    },
                )
            } else {
                (text, PredictionStatus::Ok)
            }
        }
        Err(err) => (
            String::new(),
            PredictionStatus::Error {
                message: err.to_string(),
            },
        ),
    };
    Ok(RawPrediction {
        turn_id: config.turn_id,
        note_id: summary.note_id.clone(),
        medication: medication.to_string(),
        text,
        status,
    })
}

/// Run the full matrix over turns × ground-truth pairs.
///
/// Resumable: cells already persisted with ok status are skipped; error
/// cells are retried and their corrections appended (later records win on
/// load). The store's manifest must match the current run's provenance.
pub fn run_matrix(
    gateway: &Gateway,
    corpus: &Corpus,
    summaries: &BTreeMap<(String, usize), Summary>,
    configs: &[TurnConfig],
    store: &PredictionStore,
    options: &PredictorOptions,
) -> Result<PredictionMatrix, PredictorError> {
    let provenance = Provenance {
        provider: gateway.provider_kind(),
        model_name: options.model_name.clone(),
        grid_hash: grid_hash(configs),
        corpus_hash: corpus.content_hash(),
        prompt_template: DIAGNOSIS_PROMPT_TEMPLATE.to_string(),
    };
    if let Some(existing) = store.load_manifest()? {
        if existing != provenance {
            let detail = provenance_diff(&existing, &provenance);
            return Err(PredictorError::ProvenanceMismatch {
                path: store.dir().display().to_string(),
                detail,
            });
        }
    } else {
        store.save_manifest(&provenance)?;
    }

    // Preconditions: every (note, length) needed must have a summary of the
    // right length.
    let keys = corpus.keys();
    for config in configs {
        for note in corpus.notes() {
            let summary = summaries
                .get(&(note.note_id.clone(), config.summary_length))
                .ok_or_else(|| PredictorError::MissingSummary {
                    note_id: note.note_id.clone(),
                    target_length: config.summary_length,
                })?;
            if summary.target_length != config.summary_length {
                return Err(PredictorError::SummaryMismatch {
                    turn_id: config.turn_id,
                    summary: summary.target_length,
                    expected: config.summary_length,
                });
            }
        }
    }

    let mut entries: BTreeMap<(u8, ItemKey), RawPrediction> = BTreeMap::new();
    let mut tasks: Vec<(&TurnConfig, &ItemKey)> = Vec::new();
    for config in configs {
        let existing = store.load_turn(config.turn_id)?;
        for key in &keys {
            match existing.get(key) {
                Some(prediction) if prediction.is_ok() => {
                    entries.insert((config.turn_id, key.clone()), prediction.clone());
                }
                _ => tasks.push((config, key)),
            }
        }
    }

    let results = map_bounded(&tasks, options.workers, |&(config, key)| {
        let summary = &summaries[&(key.note_id().to_string(), config.summary_length)];
        let truth = corpus
            .truth(key)
            .map(|pair| pair.accepted_diagnoses[0].as_str())
            .unwrap_or_default();
        predict_one(gateway, summary, key.medication(), truth, config, options)
    });

    let mut fresh: Vec<RawPrediction> = Vec::with_capacity(results.len());
    for result in results {
        fresh.push(result?);
    }
    store.append(&fresh)?;
    for prediction in fresh {
        entries.insert((prediction.turn_id, prediction.item()), prediction);
    }

    Ok(PredictionMatrix {
        entries,
        turns: configs.iter().map(|c| c.turn_id).collect(),
        provenance,
    })
}

fn provenance_diff(existing: &Provenance, current: &Provenance) -> String {
    let mut diffs = Vec::new();
    if existing.provider != current.provider {
        diffs.push(format!(
            "provider {} vs {}",
            existing.provider, current.provider
        ));
    }
    if existing.model_name != current.model_name {
        diffs.push(format!(
            "model {} vs {}",
            existing.model_name, current.model_name
        ));
    }
    if existing.grid_hash != current.grid_hash {
        diffs.push("grid hash differs".to_string());
    }
    if existing.corpus_hash != current.corpus_hash {
        diffs.push("corpus hash differs".to_string());
    }
    if existing.prompt_template != current.prompt_template {
        diffs.push("prompt template differs".to_string());
    }
    diffs.join("; ")
}
