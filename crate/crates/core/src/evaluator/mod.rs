//! Scoring of predictions against ground truth: text normalization, fuzzy
//! string matching, plurality voting, and the exhaustive subset sweep.

mod normalize;
mod score;
mod similarity;
mod vote;

pub use normalize::{normalize, ExpansionMap, ExpansionMapError, TextNormalizer};
pub use score::{load_scores_csv, save_scores_csv, CombinationScore, ScoringTable, Side};
pub use similarity::{is_match, levenshtein, similarity};
pub use vote::{majority_vote, VoteMode, VoteOutcome};

use thiserror::Error;

/// Default similarity threshold for fuzzy matching and vote clustering.
pub const DEFAULT_THRESHOLD: f64 = 0.60;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("turn {0} is not part of this scoring table")]
    UnknownTurn(u8),
    #[error("cannot sweep subsets of size {subset_size} over {turn_count} turns")]
    BadSubsetSize {
        subset_size: usize,
        turn_count: usize,
    },
    #[error("failed to access {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: String,
        line: usize,
        message: String,
    },
}
