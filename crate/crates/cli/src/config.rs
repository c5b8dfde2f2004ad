//! The declarative run configuration: a JSON file selected with `--config`,
//! with individual command-line flags overriding file values. The API key is
//! deliberately not part of this structure — it is read only from the
//! environment, so it can never end up in a config file or a shell history.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use consensus_dx_core::corpus::Granularity;
use consensus_dx_core::gateway::{ConfuserMode, ProviderKind};

/// A validation or usage problem; mapped to exit code 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for Usage {}

/// Build a usage error (exit 2) from a message.
pub fn usage(message: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Usage(message.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Annotated corpus (JSONL of notes and ground-truth pairs).
    pub corpus: Option<PathBuf>,
    /// Where all pipeline artifacts land.
    pub output_dir: PathBuf,
    pub provider: ProviderConfig,
    /// Content-addressed response cache (record on http, replay source for
    /// the replay provider).
    pub cache_dir: Option<PathBuf>,
    /// Optional grid override file; the canonical 18-turn grid otherwise.
    pub grid: Option<PathBuf>,
    pub split: SplitConfig,
    pub evaluation: EvalConfig,
    /// Worker threads for summarize/predict fan-out.
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: None,
            output_dir: PathBuf::from("artifacts"),
            provider: ProviderConfig::default(),
            cache_dir: None,
            grid: None,
            split: SplitConfig::default(),
            evaluation: EvalConfig::default(),
            workers: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    /// Chat-completions API root (http provider only).
    pub base_url: String,
    pub model_name: String,
    /// Upstream requests per minute; 0 disables throttling.
    pub rate_limit_per_minute: u32,
    /// Attempts per call before a transient failure is surfaced.
    pub max_attempts: u32,
    pub synthetic: SyntheticConfig,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            kind: ProviderKind::Http,
            base_url: "https://api.openai.com/v1".to_string(),
            model_name: "gpt-3.5-turbo".to_string(),
            rate_limit_per_minute: 60,
            max_attempts: 5,
            synthetic: SyntheticConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    /// Per-turn probability of answering the ground truth.
    pub accuracy: f64,
    pub confuser: ConfuserMode,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            accuracy: 0.6,
            confuser: ConfuserMode::Binary,
            seed: 17,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub fraction: f64,
    pub seed: u64,
    pub granularity: Granularity,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            fraction: 0.6,
            seed: 7,
            granularity: Granularity::Pair,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Fuzzy-match and partition threshold.
    pub threshold: f64,
    /// Ensemble size: combination size for the sweep, and the agreed-turn
    /// and selected-ensemble counts in analysis.
    pub subset_size: usize,
    /// How many top combinations feed the intersection matrix.
    pub top_n: usize,
    /// Shorthand expansion map override (JSON object), built-ins otherwise.
    pub expansion_map: Option<PathBuf>,
    /// Delete punctuation outright instead of spacing it during
    /// normalization.
    pub strict_removal: bool,
    /// Require exact equality between votes instead of fuzzy clustering.
    pub exact_vote: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            threshold: consensus_dx_core::evaluator::DEFAULT_THRESHOLD,
            subset_size: 5,
            top_n: 10,
            expansion_map: None,
            strict_removal: false,
            exact_vote: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|err| usage(format!("cannot read config {}: {err}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|err| usage(format!("invalid config {}: {err}", path.display())))
    }

    /// Check numeric ranges and that every referenced path resolves. The
    /// corpus requirement is separate because `report` runs without one.
    pub fn validate(&self) -> anyhow::Result<()> {
        if !(self.split.fraction > 0.0 && self.split.fraction <= 1.0) {
            return Err(usage(format!(
                "split fraction must be in (0, 1], got {}",
                self.split.fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.evaluation.threshold) {
            return Err(usage(format!(
                "threshold must be in [0, 1], got {}",
                self.evaluation.threshold
            )));
        }
        if self.evaluation.subset_size == 0 {
            return Err(usage("subset size must be at least 1"));
        }
        if self.evaluation.top_n == 0 {
            return Err(usage("top-n must be at least 1"));
        }
        if self.workers == 0 {
            return Err(usage("workers must be at least 1"));
        }
        if self.provider.max_attempts == 0 {
            return Err(usage("max attempts must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.provider.synthetic.accuracy) {
            return Err(usage(format!(
                "synthetic accuracy must be in [0, 1], got {}",
                self.provider.synthetic.accuracy
            )));
        }
        for (label, path) in [
            ("corpus", &self.corpus),
            ("grid override", &self.grid),
            ("expansion map", &self.evaluation.expansion_map),
        ] {
            if let Some(path) = path {
                if !path.exists() {
                    return Err(usage(format!(
                        "{label} path {} does not exist",
                        path.display()
                    )));
                }
            }
        }
        if self.provider.kind == ProviderKind::Replay && self.cache_dir.is_none() {
            return Err(usage(
                "the replay provider needs --cache-dir (or cache_dir in the config)",
            ));
        }
        Ok(())
    }

    pub fn corpus_path(&self) -> anyhow::Result<&Path> {
        self.corpus
            .as_deref()
            .ok_or_else(|| usage("no corpus given; set --corpus or `corpus` in the config"))
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }
}
