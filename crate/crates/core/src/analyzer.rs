//! Post-hoc analyses over sweep results: high/low partition, turn-frequency
//! profiles, top-combination intersection matrix, ensemble selection, and
//! held-out evaluation.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluator::{CombinationScore, EvalError, ScoringTable};

#[derive(Debug, Error)]
pub enum AnalyzerError {
    #[error("no scores to analyze")]
    EmptyScores,
    #[error("top-n must be between 1 and {available}, got {requested}")]
    BadTopN { requested: usize, available: usize },
    #[error("ensemble needs {needed} turns with nonzero counts, found {available}")]
    InsufficientTurns { needed: usize, available: usize },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("failed to write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Which half of an accuracy partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionSide {
    High,
    Low,
}

impl fmt::Display for PartitionSide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PartitionSide::High => write!(f, "high"),
            PartitionSide::Low => write!(f, "low"),
        }
    }
}

/// Combination scores split at an accuracy threshold (boundary goes high).
#[derive(Debug, Clone)]
pub struct Partition {
    pub threshold: f64,
    pub high: Vec<CombinationScore>,
    pub low: Vec<CombinationScore>,
}

impl Partition {
    pub fn side(&self, side: PartitionSide) -> &[CombinationScore] {
        match side {
            PartitionSide::High => &self.high,
            PartitionSide::Low => &self.low,
        }
    }
}

/// Split scores at `threshold`, preserving their order within each side.
pub fn partition(
    scores: &[CombinationScore],
    threshold: f64,
) -> Result<Partition, AnalyzerError> {
    if scores.is_empty() {
        return Err(AnalyzerError::EmptyScores);
    }
    let (high, low) = scores
        .iter()
        .cloned()
        .partition(|score| score.accuracy >= threshold);
    Ok(Partition {
        threshold,
        high,
        low,
    })
}

/// How often each turn appears across one side's combinations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TurnFrequency {
    pub side: PartitionSide,
    pub counts: BTreeMap<u8, usize>,
}

/// Count turn membership across the given side. Turns that appear anywhere
/// in the partition but never on this side are reported with count 0; an
/// empty side yields empty counts (with a warning).
pub fn turn_frequency(partition: &Partition, side: PartitionSide) -> TurnFrequency {
    let combos = partition.side(side);
    if combos.is_empty() {
        log::warn!("no combinations on the {side} side of the partition");
        return TurnFrequency {
            side,
            counts: BTreeMap::new(),
        };
    }
    let mut counts: BTreeMap<u8, usize> = partition
        .high
        .iter()
        .chain(&partition.low)
        .flat_map(|score| score.turns.iter().copied())
        .map(|turn_id| (turn_id, 0))
        .collect();
    for score in combos {
        for &turn_id in &score.turns {
            *counts.entry(turn_id).or_insert(0) += 1;
        }
    }
    TurnFrequency { side, counts }
}

/// Pairwise turn-overlap counts among the top-N combinations.
#[derive(Debug, Clone, PartialEq)]
pub struct IntersectionMatrix {
    pub combos: Vec<CombinationScore>,
    /// cells[i][j] = |turns_i ∩ turns_j|; symmetric, diagonal = subset size.
    pub cells: Vec<Vec<usize>>,
}

/// Intersection sizes among the first `top_n` scores (callers pass sweep
/// output, already deterministically sorted).
pub fn intersection_matrix(
    scores: &[CombinationScore],
    top_n: usize,
) -> Result<IntersectionMatrix, AnalyzerError> {
    if top_n < 1 || top_n > scores.len() {
        return Err(AnalyzerError::BadTopN {
            requested: top_n,
            available: scores.len(),
        });
    }
    let combos: Vec<CombinationScore> = scores[..top_n].to_vec();
    let cells = combos
        .iter()
        .map(|a| {
            combos
                .iter()
                .map(|b| a.turns.iter().filter(|t| b.turns.contains(t)).count())
                .collect()
        })
        .collect();
    Ok(IntersectionMatrix { combos, cells })
}

/// The `k` most commonly agreed-upon turns across the given combinations:
/// top-k by membership count, ties to the smaller turn id, sorted ascending.
pub fn agreed_turns(scores: &[CombinationScore], k: usize) -> Vec<u8> {
    top_k_turns(&count_turns(scores), k, false)
}

/// Select the voting ensemble: the top-k turns by high-side frequency, ties
/// to the smaller turn id, sorted ascending. Errors when fewer than `k`
/// turns have nonzero counts.
pub fn select_ensemble(frequency: &TurnFrequency, k: usize) -> Result<Vec<u8>, AnalyzerError> {
    select_from_counts(&frequency.counts, k)
}

fn select_from_counts(counts: &BTreeMap<u8, usize>, k: usize) -> Result<Vec<u8>, AnalyzerError> {
    let nonzero = counts.values().filter(|&&c| c > 0).count();
    if nonzero < k {
        return Err(AnalyzerError::InsufficientTurns {
            needed: k,
            available: nonzero,
        });
    }
    Ok(top_k_turns(counts, k, true))
}

fn count_turns(scores: &[CombinationScore]) -> BTreeMap<u8, usize> {
    let mut counts: BTreeMap<u8, usize> = BTreeMap::new();
    for score in scores {
        for &turn_id in &score.turns {
            *counts.entry(turn_id).or_insert(0) += 1;
        }
    }
    counts
}

fn top_k_turns(counts: &BTreeMap<u8, usize>, k: usize, nonzero_only: bool) -> Vec<u8> {
    // BTreeMap iteration is ascending by turn id, so a stable sort by count
    // descending leaves ties in smaller-id-first order.
    let mut ranked: Vec<(u8, usize)> = counts
        .iter()
        .filter(|(_, &count)| !nonzero_only || count > 0)
        .map(|(&turn_id, &count)| (turn_id, count))
        .collect();
    ranked.sort_by_key(|&(_, count)| std::cmp::Reverse(count));
    let mut turns: Vec<u8> = ranked.into_iter().take(k).map(|(t, _)| t).collect();
    turns.sort_unstable();
    turns
}

/// Best single-turn score: highest accuracy, ties to the smaller turn id.
pub fn best_single(table: &ScoringTable) -> Result<CombinationScore, EvalError> {
    let mut best: Option<CombinationScore> = None;
    for &turn_id in table.turn_ids() {
        let score = table.single_score(turn_id)?;
        let better = match &best {
            None => true,
            Some(current) => score.accuracy > current.accuracy,
        };
        if better {
            best = Some(score);
        }
    }
    best.ok_or(EvalError::BadSubsetSize {
        subset_size: 1,
        turn_count: 0,
    })
}

/// Held-out comparison of the ensemble against the best single turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestEvaluation {
    pub best_single: CombinationScore,
    pub ensemble: CombinationScore,
}

/// Evaluate on a test-side table: the ensemble's plurality-vote accuracy and
/// the best single-turn accuracy over the same items.
pub fn evaluate_on_test(
    table: &ScoringTable,
    ensemble: &[u8],
) -> Result<TestEvaluation, EvalError> {
    Ok(TestEvaluation {
        best_single: best_single(table)?,
        ensemble: table.combination_score(ensemble)?,
    })
}

/// Where the evaluated ensemble came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleSource {
    /// Selected from high-side turn frequencies (the normal path).
    HighFrequency,
    /// The high side could not seat a full ensemble, so selection fell back
    /// to frequencies over all combinations.
    OverallFrequencyFallback,
    /// Supplied explicitly by the caller.
    Override,
}

/// Everything the `analyze` stage produces; serialized as report.json.
/// Deliberately timestamp-free so reports are byte-identical across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub threshold: f64,
    pub subset_size: usize,
    pub top_n: usize,
    pub train: TrainSummary,
    pub turn_frequencies: FrequencySummary,
    pub intersection: IntersectionSummary,
    pub agreed_turns: Vec<u8>,
    pub ensemble_source: EnsembleSource,
    pub selected_ensemble: Vec<u8>,
    pub test: TestSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub items: usize,
    pub best_single: CombinationScore,
    pub best_combination: CombinationScore,
    pub worst_combination: CombinationScore,
    pub high_count: usize,
    pub low_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencySummary {
    pub high: BTreeMap<u8, usize>,
    pub low: BTreeMap<u8, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntersectionSummary {
    pub combos: Vec<Vec<u8>>,
    pub cells: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSummary {
    pub items: usize,
    pub best_single: CombinationScore,
    pub ensemble: CombinationScore,
}

/// Knobs for the full analysis.
#[derive(Debug, Clone)]
pub struct AnalyzeOptions {
    pub threshold: f64,
    pub subset_size: usize,
    pub top_n: usize,
    /// How many agreed turns to report from the top-N combinations.
    pub agreement_size: usize,
    /// Ensemble size selected from high-side frequencies.
    pub ensemble_size: usize,
    /// Evaluate this exact tuple instead of selecting one.
    pub ensemble_override: Option<Vec<u8>>,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        AnalyzeOptions {
            threshold: crate::evaluator::DEFAULT_THRESHOLD,
            subset_size: 5,
            top_n: 10,
            agreement_size: 5,
            ensemble_size: 5,
            ensemble_override: None,
        }
    }
}

/// Run the whole training-side analysis and held-out evaluation over the
/// sweep result `scores` (ordered as [`ScoringTable::sweep`] returns them).
pub fn analyze(
    train: &ScoringTable,
    test: &ScoringTable,
    scores: &[CombinationScore],
    options: &AnalyzeOptions,
) -> Result<AnalysisReport, AnalyzerError> {
    let split = partition(scores, options.threshold)?;
    let high_frequency = turn_frequency(&split, PartitionSide::High);
    let low_frequency = turn_frequency(&split, PartitionSide::Low);
    let matrix = intersection_matrix(scores, options.top_n)?;
    let agreed = agreed_turns(&matrix.combos, options.agreement_size);
    let (selected_ensemble, ensemble_source) = match &options.ensemble_override {
        Some(turns) => {
            let mut turns = turns.clone();
            turns.sort_unstable();
            turns.dedup();
            (turns, EnsembleSource::Override)
        }
        None => match select_ensemble(&high_frequency, options.ensemble_size) {
            Ok(turns) => (turns, EnsembleSource::HighFrequency),
            Err(AnalyzerError::InsufficientTurns { needed, available }) => {
                log::warn!(
                    "high side seats only {available} of {needed} ensemble turns; \
                     falling back to overall combination frequency"
                );
                (
                    select_from_counts(&count_turns(scores), options.ensemble_size)?,
                    EnsembleSource::OverallFrequencyFallback,
                )
            }
            Err(other) => return Err(other),
        },
    };
    let test_eval = evaluate_on_test(test, &selected_ensemble)?;

    Ok(AnalysisReport {
        threshold: options.threshold,
        subset_size: options.subset_size,
        top_n: options.top_n,
        train: TrainSummary {
            items: train.item_count(),
            best_single: best_single(train)?,
            best_combination: scores.first().expect("non-empty sweep").clone(),
            worst_combination: scores.last().expect("non-empty sweep").clone(),
            high_count: split.high.len(),
            low_count: split.low.len(),
        },
        turn_frequencies: FrequencySummary {
            high: high_frequency.counts,
            low: low_frequency.counts,
        },
        intersection: IntersectionSummary {
            combos: matrix.combos.iter().map(|s| s.turns.clone()).collect(),
            cells: matrix.cells,
        },
        agreed_turns: agreed,
        ensemble_source,
        selected_ensemble,
        test: TestSummary {
            items: test.item_count(),
            best_single: test_eval.best_single,
            ensemble: test_eval.ensemble,
        },
    })
}

fn write_file(path: &Path, body: &str) -> Result<(), AnalyzerError> {
    std::fs::write(path, body).map_err(|source| AnalyzerError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// frequency.csv: `side,turn_id,count`, high side first, turns ascending.
pub fn save_frequency_csv(
    path: &Path,
    frequencies: &FrequencySummary,
) -> Result<(), AnalyzerError> {
    let mut out = String::from("side,turn_id,count\n");
    for (side, counts) in [("high", &frequencies.high), ("low", &frequencies.low)] {
        for (turn_id, count) in counts {
            out.push_str(&format!("{side},{turn_id},{count}\n"));
        }
    }
    write_file(path, &out)
}

/// intersection.csv: `row,col,value` over 1-based combo indices; the combo
/// membership lives in report.json.
pub fn save_intersection_csv(
    path: &Path,
    intersection: &IntersectionSummary,
) -> Result<(), AnalyzerError> {
    let mut out = String::from("row,col,value\n");
    for (i, row) in intersection.cells.iter().enumerate() {
        for (j, value) in row.iter().enumerate() {
            out.push_str(&format!("{},{},{value}\n", i + 1, j + 1));
        }
    }
    write_file(path, &out)
}

/// report.json, pretty-printed with a trailing newline.
pub fn save_report(path: &Path, report: &AnalysisReport) -> Result<(), AnalyzerError> {
    let mut body = serde_json::to_string_pretty(report).expect("report serializes");
    body.push('\n');
    write_file(path, &body)
}

pub fn load_report(path: &Path) -> Result<AnalysisReport, AnalyzerError> {
    let text = std::fs::read_to_string(path).map_err(|source| AnalyzerError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| AnalyzerError::Io {
        path: path.display().to_string(),
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, source),
    })
}
