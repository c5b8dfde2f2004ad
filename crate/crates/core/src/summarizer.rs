//! Note summarization at the grid's target lengths, with passthrough for
//! already-short notes and hard enforcement of the length bound.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ClinicalNote, Corpus};
use crate::gateway::{CallContext, CompletionRequest, Gateway, GatewayError};
use crate::grid::LengthUnit;
use crate::pool::map_bounded;
use crate::prompts::summary_prompt;

/// One summarized note at one target length, shared by every turn with that
/// summary length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub note_id: String,
    pub target_length: usize,
    pub text: String,
    /// True when the note was already within the target and used verbatim.
    pub passthrough: bool,
}

#[derive(Debug, Error)]
pub enum SummarizerError {
    #[error("summary target length must be positive")]
    ZeroTarget,
    #[error("no summary lengths requested")]
    NoLengths,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("failed to access {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: invalid summary record: {source}")]
    Parse {
        path: String,
        line: usize,
        source: serde_json::Error,
    },
}

/// A summarization attempt that failed, kept so a run can report partial
/// results instead of aborting on the first upstream error.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryFailure {
    pub note_id: String,
    pub target_length: usize,
    pub error: String,
}

/// Outcome of summarizing a corpus: the summaries that succeeded, keyed by
/// (note_id, target_length), plus any failures.
#[derive(Debug, Default)]
pub struct SummaryRun {
    pub summaries: BTreeMap<(String, usize), Summary>,
    pub failures: Vec<SummaryFailure>,
}

impl SummaryRun {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn get(&self, note_id: &str, target_length: usize) -> Option<&Summary> {
        self.summaries
            .get(&(note_id.to_string(), target_length))
    }
}

/// Decoding and fan-out settings for summarization. Summaries are shared
/// across all turns with a given length, so decoding is pinned deterministic
/// (temperature 0.1, top_p 0.1) rather than varying with the grid.
#[derive(Debug, Clone)]
pub struct SummarizerOptions {
    pub model_name: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_output_tokens: u32,
    pub length_unit: LengthUnit,
    pub workers: usize,
}

impl Default for SummarizerOptions {
    fn default() -> Self {
        SummarizerOptions {
            model_name: "default".to_string(),
            temperature: 0.1,
            top_p: 0.1,
            max_output_tokens: 1024,
            length_unit: LengthUnit::Characters,
            workers: 4,
        }
    }
}

pub struct Summarizer<'g> {
    gateway: &'g Gateway,
    options: SummarizerOptions,
}

/// Hard ceiling on summary length: ceil(1.2 × target).
pub fn length_bound(target_length: usize) -> usize {
    (6 * target_length).div_ceil(5)
}

impl<'g> Summarizer<'g> {
    pub fn new(gateway: &'g Gateway, options: SummarizerOptions) -> Summarizer<'g> {
        Summarizer { gateway, options }
    }

    /// Summarize one note to one target length.
    ///
    /// Notes already within the target pass through verbatim without a model
    /// call. Otherwise the model is prompted once; a response exceeding the
    /// 1.2× bound earns one re-prompt (summarizing the overlong summary),
    /// and a still-overlong response is truncated at the last sentence
    /// boundary before the bound.
    pub fn summarize(
        &self,
        note: &ClinicalNote,
        target_length: usize,
    ) -> Result<Summary, SummarizerError> {
        if target_length == 0 {
            return Err(SummarizerError::ZeroTarget);
        }
        let unit = self.options.length_unit;
        if unit.measure(&note.text) <= target_length {
            return Ok(Summary {
                note_id: note.note_id.clone(),
                target_length,
                text: note.text.clone(),
                passthrough: true,
            });
        }
        let bound = length_bound(target_length);
        let first = self.request_summary(&note.text, target_length)?;
        let text = if unit.measure(&first) <= bound {
            first
        } else {
            let second = self.request_summary(&first, target_length)?;
            if unit.measure(&second) <= bound {
                second
            } else {
                log::warn!(
                    "summary of note {} still exceeds {bound} {unit:?} after re-prompt; \
                     truncating at sentence boundary",
                    note.note_id
                );
                truncate_to_bound(&second, bound, unit)
            }
        };
        Ok(Summary {
            note_id: note.note_id.clone(),
            target_length,
            text,
            passthrough: false,
        })
    }

    /// Summarize every note at every length with a bounded worker pool,
    /// collecting failures instead of aborting.
    pub fn summarize_corpus(
        &self,
        corpus: &Corpus,
        lengths: &[usize],
    ) -> Result<SummaryRun, SummarizerError> {
        if lengths.is_empty() {
            return Err(SummarizerError::NoLengths);
        }
        if lengths.contains(&0) {
            return Err(SummarizerError::ZeroTarget);
        }
        let mut targets: Vec<usize> = lengths.to_vec();
        targets.sort_unstable();
        targets.dedup();

        let mut tasks: Vec<(&ClinicalNote, usize)> = Vec::new();
        for note in corpus.notes() {
            for &target in &targets {
                tasks.push((note, target));
            }
        }
        tasks.sort_by(|a, b| (&a.0.note_id, a.1).cmp(&(&b.0.note_id, b.1)));

        let results = map_bounded(&tasks, self.options.workers, |&(note, target)| {
            (
                note.note_id.clone(),
                target,
                self.summarize(note, target),
            )
        });

        let mut run = SummaryRun::default();
        for (note_id, target, outcome) in results {
            match outcome {
                Ok(summary) => {
                    run.summaries.insert((note_id, target), summary);
                }
                Err(error) => run.failures.push(SummaryFailure {
                    note_id,
                    target_length: target,
                    error: error.to_string(),
                }),
            }
        }
        Ok(run)
    }

    fn request_summary(
        &self,
        source_text: &str,
        target_length: usize,
    ) -> Result<String, GatewayError> {
        let request = CompletionRequest {
            model_name: self.options.model_name.clone(),
            prompt: summary_prompt(source_text, target_length),
            temperature: self.options.temperature,
            top_p: self.options.top_p,
            max_output_tokens: self.options.max_output_tokens,
        };
        Ok(self.gateway.complete(&request, &CallContext::Summarize)?.text)
    }
}

/// Cut `text` to at most `bound` units, preferring the last sentence
/// boundary (., !, ?, or newline) before the bound.
fn truncate_to_bound(text: &str, bound: usize, unit: LengthUnit) -> String {
    match unit {
        LengthUnit::Characters => {
            let chars: Vec<char> = text.chars().collect();
            if chars.len() <= bound {
                return text.to_string();
            }
            let cut = chars[..bound]
                .iter()
                .rposition(|c| matches!(c, '.' | '!' | '?' | '\n'))
                .map_or(bound, |pos| pos + 1);
            chars[..cut].iter().collect::<String>().trim_end().to_string()
        }
        LengthUnit::Tokens => {
            let tokens: Vec<&str> = text.split_whitespace().collect();
            if tokens.len() <= bound {
                return text.to_string();
            }
            let cut = tokens[..bound]
                .iter()
                .rposition(|t| t.ends_with(['.', '!', '?']))
                .map_or(bound, |pos| pos + 1);
            tokens[..cut].join(" ")
        }
    }
}

/// Persist summaries as line-delimited JSON, sorted by (note_id, length).
pub fn save_summaries(
    path: &Path,
    summaries: &BTreeMap<(String, usize), Summary>,
) -> Result<(), SummarizerError> {
    let io_err = |source| SummarizerError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut file = std::fs::File::create(path).map_err(io_err)?;
    for summary in summaries.values() {
        let line = serde_json::to_string(summary).expect("summary serializes");
        writeln!(file, "{line}").map_err(io_err)?;
    }
    Ok(())
}

/// Load summaries written by [`save_summaries`]. Later records win on
/// duplicate keys, matching append-style updates.
pub fn load_summaries(
    path: &Path,
) -> Result<BTreeMap<(String, usize), Summary>, SummarizerError> {
    let file = std::fs::File::open(path).map_err(|source| SummarizerError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut summaries = BTreeMap::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| SummarizerError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let summary: Summary =
            serde_json::from_str(&line).map_err(|source| SummarizerError::Parse {
                path: path.display().to_string(),
                line: idx + 1,
                source,
            })?;
        summaries.insert((summary.note_id.clone(), summary.target_length), summary);
    }
    Ok(summaries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::GroundTruthPair;
    use crate::gateway::{
        ConfuserMode, Provider, ProviderKind, RetryPolicy, SyntheticProvider, SyntheticVoterModel,
    };
    use std::sync::atomic::{AtomicU32, Ordering};

    fn synthetic_gateway() -> Gateway {
        let model = SyntheticVoterModel::uniform(1..=18, 1.0, ConfuserMode::Binary, 0).unwrap();
        Gateway::new(
            Box::new(SyntheticProvider::new(model)),
            None,
            RetryPolicy::default(),
            None,
        )
    }

    fn note(id: &str, text: String) -> ClinicalNote {
        ClinicalNote {
            note_id: id.to_string(),
            text,
            medications: vec!["Drug".to_string()],
        }
    }

    fn summarizer(gateway: &Gateway) -> Summarizer<'_> {
        Summarizer::new(gateway, SummarizerOptions::default())
    }

    #[test]
    fn short_notes_pass_through_without_a_call() {
        let gateway = synthetic_gateway();
        let s = summarizer(&gateway);
        let n = note("n1", "Short note.".to_string());
        let summary = s.summarize(&n, 2000).unwrap();
        assert!(summary.passthrough);
        assert_eq!(summary.text, n.text);
        assert_eq!(gateway.upstream_calls(), 0);
    }

    #[test]
    fn long_notes_are_summarized_within_bound() {
        let gateway = synthetic_gateway();
        let s = summarizer(&gateway);
        let n = note("n1", "word ".repeat(200)); // 1000 chars
        let summary = s.summarize(&n, 100).unwrap();
        assert!(!summary.passthrough);
        assert!(summary.text.chars().count() <= length_bound(100));
        // The synthetic provider truncates to exactly the target.
        assert_eq!(summary.text.chars().count(), 100);
        assert_eq!(gateway.upstream_calls(), 1);
    }

    #[test]
    fn zero_target_is_rejected() {
        let gateway = synthetic_gateway();
        let s = summarizer(&gateway);
        let n = note("n1", "text".to_string());
        assert!(matches!(
            s.summarize(&n, 0),
            Err(SummarizerError::ZeroTarget)
        ));
    }

    /// Provider whose responses are scripted per call.
    struct Scripted {
        responses: Vec<String>,
        calls: AtomicU32,
    }

    impl Provider for Scripted {
        fn kind(&self) -> ProviderKind {
            ProviderKind::Synthetic
        }

        fn complete(
            &self,
            _request: &CompletionRequest,
            _context: &CallContext,
        ) -> Result<String, GatewayError> {
            let call = self.calls.fetch_add(1, Ordering::Relaxed) as usize;
            match self.responses.get(call) {
                Some(text) => Ok(text.clone()),
                None => Err(GatewayError::Protocol("script exhausted".to_string())),
            }
        }

        fn wants_cache(&self) -> bool {
            false
        }
    }

    fn scripted_gateway(responses: Vec<String>) -> Gateway {
        Gateway::new(
            Box::new(Scripted {
                responses,
                calls: AtomicU32::new(0),
            }),
            None,
            RetryPolicy::default(),
            None,
        )
    }

    #[test]
    fn overlong_response_earns_one_reprompt() {
        let overlong = "x".repeat(500);
        let fine = "A good short summary.".to_string();
        let gateway = scripted_gateway(vec![overlong, fine.clone()]);
        let s = summarizer(&gateway);
        let n = note("n1", "y".repeat(300));
        let summary = s.summarize(&n, 100).unwrap();
        assert_eq!(summary.text, fine);
        assert_eq!(gateway.upstream_calls(), 2);
    }

    #[test]
    fn persistently_overlong_response_is_truncated_at_sentence_boundary() {
        // Both attempts exceed bound 120; the second has sentence breaks.
        let sentence = "This sentence has exactly eight words in it. ";
        let overlong = sentence.repeat(10);
        let gateway = scripted_gateway(vec![overlong.clone(), overlong]);
        let s = summarizer(&gateway);
        let n = note("n1", "y".repeat(300));
        let summary = s.summarize(&n, 100).unwrap();
        assert_eq!(gateway.upstream_calls(), 2);
        let bound = length_bound(100);
        assert!(summary.text.chars().count() <= bound);
        assert!(summary.text.ends_with('.'), "cut mid-sentence: {:?}", summary.text);
        assert_eq!(
            summary.text,
            "This sentence has exactly eight words in it. This sentence has exactly eight words in it."
        );
    }

    #[test]
    fn truncation_falls_back_to_hard_cut_without_boundaries() {
        let text = "abcdefghij".repeat(5);
        let cut = truncate_to_bound(&text, 23, LengthUnit::Characters);
        assert_eq!(cut, "abcdefghijabcdefghijabc");
        let tokens = "alpha beta gamma delta";
        assert_eq!(
            truncate_to_bound(tokens, 2, LengthUnit::Tokens),
            "alpha beta"
        );
        let token_sentences = "One two. Three four five";
        assert_eq!(
            truncate_to_bound(token_sentences, 3, LengthUnit::Tokens),
            "One two."
        );
    }

    fn corpus_of(n: usize, text_len: usize) -> Corpus {
        let notes: Vec<ClinicalNote> = (0..n)
            .map(|i| ClinicalNote {
                note_id: format!("note-{i:02}"),
                text: "clinical finding. ".repeat(text_len / 18 + 1),
                medications: vec!["Drug".to_string()],
            })
            .collect();
        let pairs = notes
            .iter()
            .map(|note| GroundTruthPair {
                note_id: note.note_id.clone(),
                medication: "Drug".to_string(),
                accepted_diagnoses: vec!["condition".to_string()],
            })
            .collect();
        Corpus::new(notes, pairs).unwrap()
    }

    #[test]
    fn corpus_run_covers_notes_times_lengths() {
        let gateway = synthetic_gateway();
        let s = summarizer(&gateway);
        let corpus = corpus_of(20, 5000);
        let run = s.summarize_corpus(&corpus, &[2000, 4000]).unwrap();
        assert!(run.is_complete());
        assert_eq!(run.summaries.len(), 40);
        // Per-length sharing: the map key (note, length) is the whole story;
        // every turn at length L reads the same entry.
        let summary = run.get("note-00", 2000).unwrap();
        assert!(summary.text.chars().count() <= length_bound(2000));
    }

    #[test]
    fn empty_lengths_is_a_precondition_error() {
        let gateway = synthetic_gateway();
        let s = summarizer(&gateway);
        let corpus = corpus_of(2, 100);
        assert!(matches!(
            s.summarize_corpus(&corpus, &[]),
            Err(SummarizerError::NoLengths)
        ));
        assert!(matches!(
            s.summarize_corpus(&corpus, &[2000, 0]),
            Err(SummarizerError::ZeroTarget)
        ));
    }

    #[test]
    fn failures_are_collected_not_fatal() {
        // Script exhausts after 3 responses; later notes fail.
        let gateway = scripted_gateway(vec![
            "ok one.".to_string(),
            "ok two.".to_string(),
            "ok three.".to_string(),
        ]);
        let s = summarizer(&gateway);
        let corpus = corpus_of(5, 300);
        let run = s.summarize_corpus(&corpus, &[100]).unwrap();
        assert!(!run.is_complete());
        assert_eq!(run.summaries.len() + run.failures.len(), 5);
        assert_eq!(run.failures.len(), 2);
        for failure in &run.failures {
            assert!(failure.error.contains("script exhausted"));
        }
    }

    #[test]
    fn summaries_round_trip_through_jsonl() {
        let gateway = synthetic_gateway();
        let s = summarizer(&gateway);
        let corpus = corpus_of(3, 500);
        let run = s.summarize_corpus(&corpus, &[100, 200]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("summaries.jsonl");
        save_summaries(&path, &run.summaries).unwrap();
        let loaded = load_summaries(&path).unwrap();
        assert_eq!(loaded, run.summaries);
        let first_line = std::fs::read_to_string(&path)
            .unwrap()
            .lines()
            .next()
            .unwrap()
            .to_string();
        let value: serde_json::Value = serde_json::from_str(&first_line).unwrap();
        for field in ["note_id", "target_length", "text", "passthrough"] {
            assert!(value.get(field).is_some(), "missing field {field}");
        }
    }
}
