//! The hyperparameter grid: 18 turns over temperature x summary length x top-p.
//!
//! Turn ids are 1-based row positions in the canonical ordering (temperature
//! outermost, summary length middle, top-p innermost), so ids cited in
//! downstream analyses resolve unambiguously.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Canonical temperature values, outermost grid axis.
pub const TEMPERATURES: [f64; 3] = [0.1, 0.5, 0.95];
/// Canonical summary lengths (characters), middle axis.
pub const SUMMARY_LENGTHS: [usize; 2] = [2000, 4000];
/// Canonical top-p values, innermost axis.
pub const TOP_PS: [f64; 3] = [0.1, 0.5, 0.9];

/// One grid point: a "turn" (equivalently, a configuration).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnConfig {
    pub turn_id: u8,
    pub temperature: f64,
    pub top_p: f64,
    pub summary_length: usize,
}

/// Temperature-based grouping of turns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Deterministic,
    Balanced,
    Exploratory,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Deterministic => write!(f, "deterministic"),
            Strategy::Balanced => write!(f, "balanced"),
            Strategy::Exploratory => write!(f, "exploratory"),
        }
    }
}

/// Classify a turn by its temperature.
///
/// The canonical values 0.1 / 0.5 / 0.95 map to deterministic / balanced /
/// exploratory; custom grids are bucketed by the nearest band.
pub fn strategy_of(config: &TurnConfig) -> Strategy {
    if config.temperature < 0.3 {
        Strategy::Deterministic
    } else if config.temperature < 0.8 {
        Strategy::Balanced
    } else {
        Strategy::Exploratory
    }
}

impl TurnConfig {
    pub fn strategy(&self) -> Strategy {
        strategy_of(self)
    }
}

/// The canonical 18-turn grid in table order.
pub fn full_grid() -> Vec<TurnConfig> {
    GridSpec::default()
        .build()
        .expect("canonical grid is valid")
}

/// Unit in which summary lengths are measured.
///
/// Characters are the default; `Tokens` approximates a token as one
/// whitespace-delimited word, for sensitivity studies only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LengthUnit {
    #[default]
    Characters,
    Tokens,
}

impl LengthUnit {
    /// Length of `text` in this unit.
    pub fn measure(&self, text: &str) -> usize {
        match self {
            LengthUnit::Characters => text.chars().count(),
            LengthUnit::Tokens => text.split_whitespace().count(),
        }
    }
}

/// Value sets per grid axis. Defaults reproduce the canonical 18-turn grid;
/// an override file may substitute custom sets for extension experiments.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub temperatures: Vec<f64>,
    pub summary_lengths: Vec<usize>,
    pub top_ps: Vec<f64>,
    #[serde(default)]
    pub length_unit: LengthUnit,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            temperatures: TEMPERATURES.to_vec(),
            summary_lengths: SUMMARY_LENGTHS.to_vec(),
            top_ps: TOP_PS.to_vec(),
            length_unit: LengthUnit::Characters,
        }
    }
}

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid axis `{0}` is empty")]
    EmptyAxis(&'static str),
    #[error("grid axis `{axis}` contains duplicate value {value}")]
    DuplicateValue { axis: &'static str, value: String },
    #[error("{axis} value {value} outside legal range {range}")]
    OutOfRange {
        axis: &'static str,
        value: String,
        range: &'static str,
    },
    #[error("grid would contain {0} turns, exceeding the 255-turn id space")]
    TooLarge(usize),
    #[error("failed to read grid override {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to parse grid override {path}: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
}

impl GridSpec {
    /// Load an override file (JSON object with the axis value sets).
    pub fn load(path: &Path) -> Result<Self, GridError> {
        let text = std::fs::read_to_string(path).map_err(|source| GridError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| GridError::Parse {
            path: path.display().to_string(),
            source,
        })
    }

    fn validate(&self) -> Result<(), GridError> {
        if self.temperatures.is_empty() {
            return Err(GridError::EmptyAxis("temperatures"));
        }
        if self.summary_lengths.is_empty() {
            return Err(GridError::EmptyAxis("summary_lengths"));
        }
        if self.top_ps.is_empty() {
            return Err(GridError::EmptyAxis("top_ps"));
        }
        for (i, &t) in self.temperatures.iter().enumerate() {
            if !(0.0..=2.0).contains(&t) {
                return Err(GridError::OutOfRange {
                    axis: "temperature",
                    value: t.to_string(),
                    range: "[0, 2]",
                });
            }
            if self.temperatures[..i].contains(&t) {
                return Err(GridError::DuplicateValue {
                    axis: "temperatures",
                    value: t.to_string(),
                });
            }
        }
        for (i, &p) in self.top_ps.iter().enumerate() {
            if !(p > 0.0 && p <= 1.0) {
                return Err(GridError::OutOfRange {
                    axis: "top_p",
                    value: p.to_string(),
                    range: "(0, 1]",
                });
            }
            if self.top_ps[..i].contains(&p) {
                return Err(GridError::DuplicateValue {
                    axis: "top_ps",
                    value: p.to_string(),
                });
            }
        }
        for (i, &l) in self.summary_lengths.iter().enumerate() {
            if l == 0 {
                return Err(GridError::OutOfRange {
                    axis: "summary_length",
                    value: "0".into(),
                    range: "> 0",
                });
            }
            if self.summary_lengths[..i].contains(&l) {
                return Err(GridError::DuplicateValue {
                    axis: "summary_lengths",
                    value: l.to_string(),
                });
            }
        }
        let count = self.temperatures.len() * self.summary_lengths.len() * self.top_ps.len();
        if count > u8::MAX as usize {
            return Err(GridError::TooLarge(count));
        }
        Ok(())
    }

    /// Materialize the grid: temperature outermost, summary length middle,
    /// top-p innermost; turn_id is the 1-based position.
    pub fn build(&self) -> Result<Vec<TurnConfig>, GridError> {
        self.validate()?;
        let mut turns = Vec::new();
        let mut id: u8 = 1;
        for &temperature in &self.temperatures {
            for &summary_length in &self.summary_lengths {
                for &top_p in &self.top_ps {
                    turns.push(TurnConfig {
                        turn_id: id,
                        temperature,
                        top_p,
                        summary_length,
                    });
                    id += 1;
                }
            }
        }
        Ok(turns)
    }
}

/// Content hash of a grid, recorded in run manifests.
pub fn grid_hash(grid: &[TurnConfig]) -> String {
    let canonical: serde_json::Value =
        serde_json::to_value(grid).expect("grid serialization cannot fail");
    let mut hasher = Sha256::new();
    hasher.update(canonical.to_string().as_bytes());
    hex::encode(hasher.finalize())
}

/// Look up a turn by id.
pub fn turn_by_id(grid: &[TurnConfig], turn_id: u8) -> Option<&TurnConfig> {
    grid.iter().find(|t| t.turn_id == turn_id)
}
