//! consensus-dx: run a language model across a hyperparameter grid, vote the
//! turns' diagnosis predictions into an ensemble, and analyze which turns
//! carry the consensus.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.

mod config;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use consensus_dx_core::corpus::Granularity;
use consensus_dx_core::evaluator::Side;
use consensus_dx_core::gateway::ProviderKind;

use config::{RunConfig, Usage};
use stages::{Pipeline, VoteScope};

#[derive(Debug, Parser)]
#[command(
    name = "consensus-dx",
    version,
    about = "Configuration-ensemble diagnosis prediction over clinical notes",
    after_help = "The API key for the http provider is read only from the \
                  CONSENSUS_DX_API_KEY environment variable."
)]
struct Cli {
    /// Run configuration file (JSON); flags below override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Annotated corpus (JSONL).
    #[arg(long, global = true, value_name = "FILE")]
    corpus: Option<PathBuf>,

    /// Directory for all pipeline artifacts.
    #[arg(long, global = true, value_name = "DIR")]
    output_dir: Option<PathBuf>,

    /// Model provider.
    #[arg(long, global = true, value_parser = ["http", "replay", "synthetic"])]
    provider: Option<String>,

    /// Chat-completions API root for the http provider.
    #[arg(long, global = true, value_name = "URL")]
    base_url: Option<String>,

    /// Model name sent with every request.
    #[arg(long, global = true, value_name = "NAME")]
    model: Option<String>,

    /// Response-cache directory (recorded by http, read by replay).
    #[arg(long, global = true, value_name = "DIR")]
    cache_dir: Option<PathBuf>,

    /// Grid override file (JSON axis sets).
    #[arg(long, global = true, value_name = "FILE")]
    grid: Option<PathBuf>,

    /// Train fraction of the corpus split.
    #[arg(long, global = true, value_name = "F")]
    fraction: Option<f64>,

    /// Split shuffle seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Split unit: individual pairs or whole notes.
    #[arg(long, global = true, value_parser = ["pair", "note"])]
    granularity: Option<String>,

    /// Fuzzy-match and partition threshold.
    #[arg(long, global = true, value_name = "T")]
    threshold: Option<f64>,

    /// Ensemble size k (combination size, agreed turns, selected ensemble).
    #[arg(long, short = 'k', global = true, value_name = "K")]
    subset_size: Option<usize>,

    /// How many top combinations feed the intersection matrix.
    #[arg(long, global = true, value_name = "N")]
    top_n: Option<usize>,

    /// Shorthand expansion map override (JSON object).
    #[arg(long, global = true, value_name = "FILE")]
    expansion_map: Option<PathBuf>,

    /// Delete punctuation outright instead of spacing it.
    #[arg(long, global = true)]
    strict_removal: bool,

    /// Require exact vote equality instead of fuzzy clustering.
    #[arg(long, global = true)]
    exact_vote: bool,

    /// Worker threads for summarize/predict fan-out.
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,

    /// Upstream requests per minute for the http provider (0 = unlimited).
    #[arg(long, global = true, value_name = "N")]
    rate_limit: Option<u32>,

    /// Per-turn accuracy of the synthetic voter.
    #[arg(long, global = true, value_name = "P")]
    synthetic_accuracy: Option<f64>,

    /// Seed of the synthetic voter.
    #[arg(long, global = true, value_name = "N")]
    synthetic_seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Summarize every note to each summary length in the grid.
    Summarize {
        /// Succeed even if some notes fail to summarize.
        #[arg(long)]
        allow_partial: bool,
    },
    /// Fill the (turn × note × medication) prediction matrix.
    Predict {
        /// Comma-separated turn ids (default: every turn in the grid).
        #[arg(long, value_delimiter = ',', value_name = "IDS")]
        turns: Option<Vec<u8>>,
        /// Succeed even if some cells remain in error.
        #[arg(long)]
        allow_partial: bool,
    },
    /// Score every k-subset of turns by plurality vote on one split.
    Sweep {
        /// Which split to score.
        #[arg(long, default_value = "train", value_parser = ["train", "test"])]
        split: String,
        /// Score whatever predictions exist, even if the matrix is incomplete.
        #[arg(long)]
        allow_partial: bool,
    },
    /// Show plurality-vote outcomes item by item for a turn subset.
    Vote {
        /// Comma-separated turn ids (default: every turn in the grid).
        #[arg(long, value_delimiter = ',', value_name = "IDS")]
        turns: Option<Vec<u8>>,
        /// Which items to vote on.
        #[arg(long, default_value = "all", value_parser = ["train", "test", "all"])]
        split: String,
    },
    /// Partition the sweep, profile turns, select and evaluate an ensemble.
    Analyze {
        /// Evaluate this exact comma-separated ensemble instead of selecting
        /// one from high-side frequencies.
        #[arg(long, value_delimiter = ',', value_name = "IDS")]
        ensemble: Option<Vec<u8>>,
    },
    /// Pretty-print an existing report.json.
    Report,
}

impl Cli {
    fn resolve_config(&self) -> anyhow::Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(corpus) = &self.corpus {
            config.corpus = Some(corpus.clone());
        }
        if let Some(dir) = &self.output_dir {
            config.output_dir = dir.clone();
        }
        if let Some(provider) = &self.provider {
            config.provider.kind = match provider.as_str() {
                "http" => ProviderKind::Http,
                "replay" => ProviderKind::Replay,
                _ => ProviderKind::Synthetic,
            };
        }
        if let Some(url) = &self.base_url {
            config.provider.base_url = url.clone();
        }
        if let Some(model) = &self.model {
            config.provider.model_name = model.clone();
        }
        if let Some(dir) = &self.cache_dir {
            config.cache_dir = Some(dir.clone());
        }
        if let Some(grid) = &self.grid {
            config.grid = Some(grid.clone());
        }
        if let Some(fraction) = self.fraction {
            config.split.fraction = fraction;
        }
        if let Some(seed) = self.seed {
            config.split.seed = seed;
        }
        if let Some(granularity) = &self.granularity {
            config.split.granularity = match granularity.as_str() {
                "note" => Granularity::Note,
                _ => Granularity::Pair,
            };
        }
        if let Some(threshold) = self.threshold {
            config.evaluation.threshold = threshold;
        }
        if let Some(k) = self.subset_size {
            config.evaluation.subset_size = k;
        }
        if let Some(top_n) = self.top_n {
            config.evaluation.top_n = top_n;
        }
        if let Some(map) = &self.expansion_map {
            config.evaluation.expansion_map = Some(map.clone());
        }
        if self.strict_removal {
            config.evaluation.strict_removal = true;
        }
        if self.exact_vote {
            config.evaluation.exact_vote = true;
        }
        if let Some(workers) = self.workers {
            config.workers = workers;
        }
        if let Some(rate) = self.rate_limit {
            config.provider.rate_limit_per_minute = rate;
        }
        if let Some(accuracy) = self.synthetic_accuracy {
            config.provider.synthetic.accuracy = accuracy;
        }
        if let Some(seed) = self.synthetic_seed {
            config.provider.synthetic.seed = seed;
        }
        config.validate()?;
        Ok(config)
    }
}

fn parse_side(text: &str) -> Side {
    text.parse().expect("clap restricts the values")
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let config = cli.resolve_config()?;
    if let Command::Report = cli.command {
        return stages::cmd_report(&config);
    }
    let pipeline = Pipeline::load(config)?;
    match &cli.command {
        Command::Summarize { allow_partial } => stages::cmd_summarize(&pipeline, *allow_partial),
        Command::Predict {
            turns,
            allow_partial,
        } => stages::cmd_predict(&pipeline, turns, *allow_partial),
        Command::Sweep {
            split,
            allow_partial,
        } => stages::cmd_sweep(&pipeline, parse_side(split), *allow_partial),
        Command::Vote { turns, split } => {
            let scope = match split.as_str() {
                "train" => VoteScope::Train,
                "test" => VoteScope::Test,
                _ => VoteScope::All,
            };
            stages::cmd_vote(&pipeline, turns, scope)
        }
        Command::Analyze { ensemble } => stages::cmd_analyze(&pipeline, ensemble),
        Command::Report => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.is::<Usage>() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
