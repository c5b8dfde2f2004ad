//! Configuration-ensemble diagnosis prediction over clinical notes.
//!
//! The pipeline runs a language model across an 18-point hyperparameter grid
//! (temperature x summary length x top-p), collects one diagnosis prediction
//! per (turn, note, medication) cell, aggregates subsets of turns by plurality
//! voting with fuzzy-match clustering, and analyzes which turns drive
//! high-accuracy ensembles.
//!
//! Modules map onto pipeline stages:
//!
//! - [`corpus`]: annotated medication-diagnosis corpus, validation, train/test split
//! - [`grid`]: the 18-turn configuration grid and strategy taxonomy
//! - [`gateway`]: model access (HTTP, record/replay cache, synthetic voter)
//! - [`prompts`]: the fixed prompt templates
//! - [`summarizer`]: short/long note summaries shared across turns
//! - [`predictor`]: the (turn, note, medication) prediction matrix
//! - [`evaluator`]: normalization, fuzzy matching, plurality voting, subset scoring
//! - [`analyzer`]: partition, turn frequencies, intersections, ensemble selection

pub mod analyzer;
pub mod corpus;
pub mod evaluator;
pub mod gateway;
pub mod grid;
mod pool;
pub mod predictor;
pub mod prompts;
pub mod summarizer;
