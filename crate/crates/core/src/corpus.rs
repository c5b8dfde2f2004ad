//! Annotated medication-diagnosis corpus: loading, validation, splitting.
//!
//! The corpus file is line-delimited JSON, one note per line:
//!
//! ```json
//! {"note_id": "n1", "text": "...", "medications": ["Enalapril Maleate"],
//!  "ground_truth": [{"medication": "Enalapril Maleate", "diagnoses": ["hypertension"]}]}
//! ```
//!
//! Notes may list medications without a confirmed ground-truth pair; only
//! confirmed pairs are scored downstream.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// One clinical note with the medications it mentions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClinicalNote {
    pub note_id: String,
    pub text: String,
    pub medications: Vec<String>,
}

/// An expert-confirmed medication-diagnosis link within one note. A
/// prediction matching any accepted diagnosis counts as correct.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthPair {
    pub note_id: String,
    pub medication: String,
    pub accepted_diagnoses: Vec<String>,
}

/// Identifies one scored item: a (note, medication) pair.
///
/// Serializes as a two-element array `[note_id, medication]`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ItemKey(pub String, pub String);

impl ItemKey {
    pub fn new(note_id: impl Into<String>, medication: impl Into<String>) -> Self {
        ItemKey(note_id.into(), medication.into())
    }

    pub fn note_id(&self) -> &str {
        &self.0
    }

    pub fn medication(&self) -> &str {
        &self.1
    }
}

impl fmt::Display for ItemKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}", self.0, self.1)
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {source}")]
    Parse {
        path: String,
        line: usize,
        source: serde_json::Error,
    },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("duplicate note_id `{0}`")]
    DuplicateNoteId(String),
    #[error("note `{0}` has empty text")]
    EmptyText(String),
    #[error("note `{0}` has an empty or blank field")]
    BlankField(String),
    #[error("note `{0}` lists no medications")]
    EmptyMedications(String),
    #[error("note `{note_id}` lists medication `{medication}` more than once")]
    DuplicateMedication { note_id: String, medication: String },
    #[error("duplicate ground-truth pair ({note_id}, {medication})")]
    DuplicatePair { note_id: String, medication: String },
    #[error("pair ({note_id}, {medication}) references a medication absent from the note's medication list")]
    DanglingMedication { note_id: String, medication: String },
    #[error("pair ({note_id}, {medication}) has no accepted diagnoses")]
    EmptyDiagnoses { note_id: String, medication: String },
    #[error("train_fraction must be in (0, 1], got {0}")]
    BadFraction(f64),
    #[error("corpus has no ground-truth pairs to split")]
    NoPairs,
}

/// On-disk record: one note plus its confirmed pairs.
#[derive(Debug, Serialize, Deserialize)]
struct NoteRecord {
    note_id: String,
    text: String,
    medications: Vec<String>,
    ground_truth: Vec<TruthRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TruthRecord {
    medication: String,
    diagnoses: Vec<String>,
}

/// A validated corpus: notes plus confirmed ground-truth pairs, with lookup
/// indexes. Immutable after construction.
#[derive(Debug, Clone)]
pub struct Corpus {
    notes: Vec<ClinicalNote>,
    pairs: Vec<GroundTruthPair>,
    note_index: BTreeMap<String, usize>,
    pair_index: BTreeMap<ItemKey, usize>,
}

impl Corpus {
    /// Validate and index notes and pairs.
    pub fn new(
        notes: Vec<ClinicalNote>,
        pairs: Vec<GroundTruthPair>,
    ) -> Result<Self, CorpusError> {
        if notes.is_empty() {
            return Err(CorpusError::EmptyCorpus);
        }
        let mut note_index = BTreeMap::new();
        for (i, note) in notes.iter().enumerate() {
            if note.note_id.trim().is_empty() {
                return Err(CorpusError::BlankField(note.note_id.clone()));
            }
            if note.text.is_empty() {
                return Err(CorpusError::EmptyText(note.note_id.clone()));
            }
            if note.medications.is_empty() {
                return Err(CorpusError::EmptyMedications(note.note_id.clone()));
            }
            let mut seen = BTreeSet::new();
            for med in &note.medications {
                if med.trim().is_empty() {
                    return Err(CorpusError::BlankField(note.note_id.clone()));
                }
                if !seen.insert(med) {
                    return Err(CorpusError::DuplicateMedication {
                        note_id: note.note_id.clone(),
                        medication: med.clone(),
                    });
                }
            }
            if note_index.insert(note.note_id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateNoteId(note.note_id.clone()));
            }
        }
        let mut pair_index = BTreeMap::new();
        for (i, pair) in pairs.iter().enumerate() {
            let key = ItemKey::new(&pair.note_id, &pair.medication);
            let note = note_index
                .get(&pair.note_id)
                .map(|&idx| &notes[idx])
                .ok_or_else(|| CorpusError::DanglingMedication {
                    note_id: pair.note_id.clone(),
                    medication: pair.medication.clone(),
                })?;
            if !note.medications.contains(&pair.medication) {
                return Err(CorpusError::DanglingMedication {
                    note_id: pair.note_id.clone(),
                    medication: pair.medication.clone(),
                });
            }
            if pair.accepted_diagnoses.is_empty()
                || pair.accepted_diagnoses.iter().any(|d| d.trim().is_empty())
            {
                return Err(CorpusError::EmptyDiagnoses {
                    note_id: pair.note_id.clone(),
                    medication: pair.medication.clone(),
                });
            }
            if pair_index.insert(key, i).is_some() {
                return Err(CorpusError::DuplicatePair {
                    note_id: pair.note_id.clone(),
                    medication: pair.medication.clone(),
                });
            }
        }
        Ok(Corpus {
            notes,
            pairs,
            note_index,
            pair_index,
        })
    }

    pub fn notes(&self) -> &[ClinicalNote] {
        &self.notes
    }

    pub fn pairs(&self) -> &[GroundTruthPair] {
        &self.pairs
    }

    pub fn note(&self, note_id: &str) -> Option<&ClinicalNote> {
        self.note_index.get(note_id).map(|&i| &self.notes[i])
    }

    pub fn truth(&self, key: &ItemKey) -> Option<&GroundTruthPair> {
        self.pair_index.get(key).map(|&i| &self.pairs[i])
    }

    /// All scored item keys, sorted.
    pub fn keys(&self) -> Vec<ItemKey> {
        self.pair_index.keys().cloned().collect()
    }

    /// Content hash over the canonical record serialization, recorded in run
    /// manifests.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for record in self.to_records() {
            let value =
                serde_json::to_value(&record).expect("record serialization cannot fail");
            hasher.update(value.to_string().as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }

    fn to_records(&self) -> Vec<NoteRecord> {
        self.notes
            .iter()
            .map(|note| NoteRecord {
                note_id: note.note_id.clone(),
                text: note.text.clone(),
                medications: note.medications.clone(),
                ground_truth: self
                    .pairs
                    .iter()
                    .filter(|p| p.note_id == note.note_id)
                    .map(|p| TruthRecord {
                        medication: p.medication.clone(),
                        diagnoses: p.accepted_diagnoses.clone(),
                    })
                    .collect(),
            })
            .collect()
    }
}

/// Load and validate a line-delimited JSON corpus file.
pub fn load_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let file = std::fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut notes = Vec::new();
    let mut pairs = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: NoteRecord =
            serde_json::from_str(&line).map_err(|source| CorpusError::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                source,
            })?;
        for truth in record.ground_truth {
            pairs.push(GroundTruthPair {
                note_id: record.note_id.clone(),
                medication: truth.medication,
                accepted_diagnoses: truth.diagnoses,
            });
        }
        notes.push(ClinicalNote {
            note_id: record.note_id,
            text: record.text,
            medications: record.medications,
        });
    }
    Corpus::new(notes, pairs)
}

/// Write a corpus back to line-delimited JSON. `load_corpus` of the result
/// reproduces the corpus exactly.
pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    let mut file = std::fs::File::create(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    for record in corpus.to_records() {
        let line = serde_json::to_string(&record).expect("record serialization cannot fail");
        writeln!(file, "{line}").map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    Ok(())
}

/// Unit over which the train/test split is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    /// Split individual (note, medication) pairs.
    #[default]
    Pair,
    /// Split whole notes, so no note contributes to both sides.
    Note,
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Granularity::Pair => write!(f, "pair"),
            Granularity::Note => write!(f, "note"),
        }
    }
}

/// A seeded train/test partition of the corpus keys. Train and test are
/// stored sorted, so equal splits serialize byte-equal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub seed: u64,
    pub train_fraction: f64,
    pub granularity: Granularity,
    pub train: Vec<ItemKey>,
    pub test: Vec<ItemKey>,
}

impl DatasetSplit {
    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let json = serde_json::to_string_pretty(self).expect("split serialization cannot fail");
        std::fs::write(path, json + "\n").map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| CorpusError::Parse {
            path: path.display().to_string(),
            line: 0,
            source,
        })
    }
}

/// floor(fraction * n), snapped to the nearest integer when the product is
/// within 1e-9 of it. The snap keeps decimal fractions exact (0.6 * 240 must
/// give 144, 0.7 * 10 must give 7) despite binary rounding.
fn floor_fraction(fraction: f64, n: usize) -> usize {
    let product = fraction * n as f64;
    let nearest = product.round();
    if (product - nearest).abs() < 1e-9 {
        nearest as usize
    } else {
        product.floor() as usize
    }
}

/// Fisher-Yates shuffle driven by ChaCha20 seeded from `seed`. The index at
/// each step is `next_u64() % (i + 1)`; documented so the split is portable.
fn seeded_shuffle<T>(items: &mut [T], seed: u64) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    for i in (1..items.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        items.swap(i, j);
    }
}

/// Partition corpus keys into train/test.
///
/// Units (pairs or notes) are sorted lexicographically, shuffled with the
/// seeded Fisher-Yates above, and the first `floor(fraction * count)` units
/// become the train side. Deterministic for fixed (seed, granularity).
pub fn split_corpus(
    corpus: &Corpus,
    train_fraction: f64,
    seed: u64,
    granularity: Granularity,
) -> Result<DatasetSplit, CorpusError> {
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(CorpusError::BadFraction(train_fraction));
    }
    let keys = corpus.keys();
    if keys.is_empty() {
        return Err(CorpusError::NoPairs);
    }
    let (mut train, mut test) = match granularity {
        Granularity::Pair => {
            let mut units = keys;
            seeded_shuffle(&mut units, seed);
            let take = floor_fraction(train_fraction, units.len());
            let test = units.split_off(take);
            (units, test)
        }
        Granularity::Note => {
            let mut note_ids: Vec<String> = corpus
                .notes()
                .iter()
                .map(|n| n.note_id.clone())
                .collect();
            note_ids.sort();
            seeded_shuffle(&mut note_ids, seed);
            let take = floor_fraction(train_fraction, note_ids.len());
            let train_notes: BTreeSet<&String> = note_ids[..take].iter().collect();
            let mut train = Vec::new();
            let mut test = Vec::new();
            for key in keys {
                if train_notes.contains(&key.0) {
                    train.push(key);
                } else {
                    test.push(key);
                }
            }
            (train, test)
        }
    };
    train.sort();
    test.sort();
    Ok(DatasetSplit {
        seed,
        train_fraction,
        granularity,
        train,
        test,
    })
}
