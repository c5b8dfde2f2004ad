//! Stage implementations behind the subcommands. Each stage reads its
//! predecessor's on-disk artifact and writes its own, so an interrupted run
//! resumes where it stopped and API spend is never repeated.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};

use consensus_dx_core::analyzer::{
    analyze, best_single, save_frequency_csv, save_intersection_csv, save_report, AnalysisReport,
    AnalyzeOptions, AnalyzerError, EnsembleSource,
};
use consensus_dx_core::corpus::{load_corpus, split_corpus, Corpus, DatasetSplit, ItemKey};
use consensus_dx_core::evaluator::{
    is_match, load_scores_csv, majority_vote, save_scores_csv, CombinationScore, EvalError,
    ExpansionMap, ScoringTable, Side, TextNormalizer, VoteMode,
};
use consensus_dx_core::gateway::{
    Gateway, HttpProvider, Provider, ProviderKind, ReplayProvider, ResponseCache, RetryPolicy,
    SyntheticProvider, SyntheticVoterModel, TokenBucket,
};
use consensus_dx_core::grid::{GridSpec, LengthUnit, TurnConfig};
use consensus_dx_core::predictor::{
    run_matrix, PredictionMatrix, PredictionStore, PredictorOptions,
};
use consensus_dx_core::summarizer::{
    load_summaries, save_summaries, Summarizer, SummarizerOptions,
};

use crate::config::{usage, RunConfig};

/// Which items the `vote` command reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VoteScope {
    Train,
    Test,
    All,
}

/// Loaded inputs shared by every stage: the config, the corpus, and the
/// turn grid.
pub struct Pipeline {
    pub config: RunConfig,
    pub corpus: Corpus,
    pub grid: Vec<TurnConfig>,
    pub length_unit: LengthUnit,
}

impl Pipeline {
    pub fn load(config: RunConfig) -> Result<Pipeline> {
        let corpus_path = config.corpus_path()?;
        let corpus = load_corpus(corpus_path)
            .map_err(|err| usage(format!("invalid corpus {}: {err}", corpus_path.display())))?;
        let spec = match &config.grid {
            Some(path) => GridSpec::load(path)
                .map_err(|err| usage(format!("invalid grid override: {err}")))?,
            None => GridSpec::default(),
        };
        let length_unit = spec.length_unit;
        let grid = spec
            .build()
            .map_err(|err| usage(format!("invalid grid override: {err}")))?;
        std::fs::create_dir_all(&config.output_dir).with_context(|| {
            format!("cannot create output dir {}", config.output_dir.display())
        })?;
        Ok(Pipeline {
            config,
            corpus,
            grid,
            length_unit,
        })
    }

    fn summaries_path(&self) -> PathBuf {
        self.config.artifact("summaries.jsonl")
    }

    fn predictions_dir(&self) -> PathBuf {
        self.config.artifact("predictions")
    }

    fn scores_path(&self) -> PathBuf {
        self.config.artifact("scores.csv")
    }

    pub fn build_gateway(&self) -> Result<Gateway> {
        let settings = &self.config.provider;
        let provider: Box<dyn Provider> = match settings.kind {
            ProviderKind::Http => Box::new(
                HttpProvider::from_env(&settings.base_url)
                    .map_err(|err| usage(err.to_string()))?,
            ),
            ProviderKind::Replay => {
                let dir = self
                    .config
                    .cache_dir
                    .as_ref()
                    .expect("validated: replay requires cache_dir");
                Box::new(ReplayProvider::new(ResponseCache::open(dir)))
            }
            ProviderKind::Synthetic => {
                let model = SyntheticVoterModel::uniform(
                    self.grid.iter().map(|c| c.turn_id),
                    settings.synthetic.accuracy,
                    settings.synthetic.confuser,
                    settings.synthetic.seed,
                )
                .map_err(|err| usage(err.to_string()))?;
                Box::new(SyntheticProvider::new(model))
            }
        };
        let cache = match (settings.kind, &self.config.cache_dir) {
            (ProviderKind::Http, Some(dir)) => Some(ResponseCache::create(dir)?),
            _ => None,
        };
        let limiter = (settings.kind == ProviderKind::Http && settings.rate_limit_per_minute > 0)
            .then(|| TokenBucket::per_minute(settings.rate_limit_per_minute));
        let retry = RetryPolicy {
            max_attempts: settings.max_attempts,
            ..RetryPolicy::default()
        };
        Ok(Gateway::new(provider, cache, retry, limiter))
    }

    /// The seeded split is a pure function of (corpus, fraction, seed,
    /// granularity); it is also persisted as split.json for inspection.
    pub fn make_split(&self) -> Result<DatasetSplit> {
        let split = split_corpus(
            &self.corpus,
            self.config.split.fraction,
            self.config.split.seed,
            self.config.split.granularity,
        )?;
        split.save(&self.config.artifact("split.json"))?;
        Ok(split)
    }

    pub fn normalizer(&self) -> Result<TextNormalizer> {
        let map = match &self.config.evaluation.expansion_map {
            Some(path) => ExpansionMap::load(path)
                .map_err(|err| usage(format!("invalid expansion map: {err}")))?,
            None => ExpansionMap::default_map(),
        };
        Ok(TextNormalizer::new(
            map,
            self.config.evaluation.strict_removal,
        ))
    }

    fn vote_mode(&self) -> VoteMode {
        if self.config.evaluation.exact_vote {
            VoteMode::Exact
        } else {
            VoteMode::Fuzzy
        }
    }

    /// Resolve a `--turns` list against the grid, or use every turn.
    fn select_turns(&self, turns: &Option<Vec<u8>>) -> Result<Vec<TurnConfig>> {
        match turns {
            None => Ok(self.grid.clone()),
            Some(ids) => {
                let mut ids = ids.clone();
                ids.sort_unstable();
                ids.dedup();
                if ids.is_empty() {
                    return Err(usage("--turns needs at least one turn id"));
                }
                ids.iter()
                    .map(|&id| {
                        consensus_dx_core::grid::turn_by_id(&self.grid, id)
                            .cloned()
                            .ok_or_else(|| {
                                usage(format!(
                                    "unknown turn id {id}; the grid defines turns 1..={}",
                                    self.grid.len()
                                ))
                            })
                    })
                    .collect()
            }
        }
    }

    fn load_matrix(&self) -> Result<PredictionMatrix> {
        let store = PredictionStore::create(&self.predictions_dir())?;
        store.load_matrix(&self.grid).map_err(|err| {
            anyhow::anyhow!("{err}; run `consensus-dx predict` before this stage")
        })
    }

    /// Per-item truths restricted to `keys`, normalized lazily by the table.
    fn truths_for(&self, keys: &[ItemKey]) -> BTreeMap<ItemKey, Vec<String>> {
        keys.iter()
            .map(|key| {
                let pair = self
                    .corpus
                    .truth(key)
                    .expect("split keys come from this corpus");
                (key.clone(), pair.accepted_diagnoses.clone())
            })
            .collect()
    }

    fn scoring_table(
        &self,
        matrix: &PredictionMatrix,
        keys: &[ItemKey],
        side: Side,
    ) -> Result<ScoringTable> {
        let keyset: BTreeSet<&ItemKey> = keys.iter().collect();
        let mut answers = matrix.ok_answers();
        for per_item in answers.values_mut() {
            per_item.retain(|key, _| keyset.contains(key));
        }
        Ok(ScoringTable::build(
            &answers,
            &self.truths_for(keys),
            &self.normalizer()?,
            self.config.evaluation.threshold,
            self.vote_mode(),
            side,
        ))
    }

    /// How many (turn, item) cells lack an ok prediction.
    fn incomplete_cells(&self, matrix: &PredictionMatrix, keys: &[ItemKey]) -> usize {
        self.grid
            .iter()
            .map(|config| {
                keys.iter()
                    .filter(|key| {
                        !matrix
                            .get(config.turn_id, key)
                            .is_some_and(|p| p.is_ok())
                    })
                    .count()
            })
            .sum()
    }
}

fn describe_combo(score: &CombinationScore) -> String {
    let turns = score
        .turns
        .iter()
        .map(u8::to_string)
        .collect::<Vec<_>>()
        .join(";");
    format!(
        "{turns} — {:.6} ({}/{})",
        score.accuracy, score.correct, score.total
    )
}

pub fn cmd_summarize(pipeline: &Pipeline, allow_partial: bool) -> Result<()> {
    let gateway = pipeline.build_gateway()?;
    let lengths: Vec<usize> = pipeline
        .grid
        .iter()
        .map(|c| c.summary_length)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let options = SummarizerOptions {
        model_name: pipeline.config.provider.model_name.clone(),
        length_unit: pipeline.length_unit,
        workers: pipeline.config.workers,
        ..SummarizerOptions::default()
    };
    let run = Summarizer::new(&gateway, options).summarize_corpus(&pipeline.corpus, &lengths)?;
    save_summaries(&pipeline.summaries_path(), &run.summaries)?;

    for &length in &lengths {
        let at_length: Vec<_> = run
            .summaries
            .iter()
            .filter(|((_, l), _)| *l == length)
            .collect();
        let passthrough = at_length.iter().filter(|(_, s)| s.passthrough).count();
        println!(
            "length {length}: {} summaries ({passthrough} passthrough)",
            at_length.len()
        );
    }
    println!(
        "summarize: {} summaries, {} failures, {} upstream calls",
        run.summaries.len(),
        run.failures.len(),
        gateway.upstream_calls()
    );
    if !run.failures.is_empty() {
        for failure in &run.failures {
            eprintln!(
                "warning: note {} at length {} failed: {}",
                failure.note_id, failure.target_length, failure.error
            );
        }
        if !allow_partial {
            bail!(
                "{} of {} summaries failed; re-run to retry (successes are cached) \
                 or pass --allow-partial",
                run.failures.len(),
                run.summaries.len() + run.failures.len()
            );
        }
    }
    Ok(())
}

pub fn cmd_predict(
    pipeline: &Pipeline,
    turns: &Option<Vec<u8>>,
    allow_partial: bool,
) -> Result<()> {
    let configs = pipeline.select_turns(turns)?;
    let summaries_path = pipeline.summaries_path();
    let summaries = load_summaries(&summaries_path).map_err(|err| {
        anyhow::anyhow!("{err}; run `consensus-dx summarize` before predicting")
    })?;
    let store = PredictionStore::create(&pipeline.predictions_dir())?;
    let gateway = pipeline.build_gateway()?;
    let options = PredictorOptions {
        model_name: pipeline.config.provider.model_name.clone(),
        workers: pipeline.config.workers,
        ..PredictorOptions::default()
    };
    let matrix = run_matrix(
        &gateway,
        &pipeline.corpus,
        &summaries,
        &configs,
        &store,
        &options,
    )?;
    for completion in matrix.completion_report() {
        println!(
            "turn {:>2}: {} ok, {} errors",
            completion.turn_id, completion.ok, completion.errors
        );
    }
    let errors = matrix.error_count();
    println!(
        "predict: {} cells, {} errors, {} upstream calls",
        matrix.entries.len(),
        errors,
        gateway.upstream_calls()
    );
    if errors > 0 && !allow_partial {
        bail!(
            "{errors} prediction cells failed; re-run to retry them \
             or pass --allow-partial"
        );
    }
    Ok(())
}

pub fn cmd_sweep(pipeline: &Pipeline, side: Side, allow_partial: bool) -> Result<()> {
    let split = pipeline.make_split()?;
    let keys: &[ItemKey] = match side {
        Side::Train => &split.train,
        Side::Test => &split.test,
    };
    let matrix = pipeline.load_matrix()?;
    let incomplete = pipeline.incomplete_cells(&matrix, keys);
    if incomplete > 0 {
        let message = format!(
            "prediction matrix incomplete for the {side} split: {incomplete} cells \
             missing or in error; run `consensus-dx predict`"
        );
        if !allow_partial {
            bail!("{message}, or pass --allow-partial");
        }
        eprintln!("warning: {message}");
    }
    let table = pipeline.scoring_table(&matrix, keys, side)?;
    let k = pipeline.config.evaluation.subset_size;
    let scores = table.sweep(k).map_err(|err| match err {
        EvalError::BadSubsetSize { .. } => usage(err.to_string()),
        other => anyhow::Error::new(other),
    })?;
    save_scores_csv(&pipeline.scores_path(), &scores)?;

    println!(
        "sweep: {} combinations of {} turns choose {k} over {} {side} items",
        scores.len(),
        pipeline.grid.len(),
        keys.len()
    );
    println!("best single:      {}", describe_combo(&best_single(&table)?));
    println!(
        "best combination: {}",
        describe_combo(scores.first().expect("non-empty sweep"))
    );
    println!(
        "worst combination: {}",
        describe_combo(scores.last().expect("non-empty sweep"))
    );
    Ok(())
}

pub fn cmd_vote(pipeline: &Pipeline, turns: &Option<Vec<u8>>, scope: VoteScope) -> Result<()> {
    let configs = pipeline.select_turns(turns)?;
    let matrix = pipeline.load_matrix()?;
    let keys: Vec<ItemKey> = match scope {
        VoteScope::All => pipeline.corpus.keys(),
        VoteScope::Train => pipeline.make_split()?.train,
        VoteScope::Test => pipeline.make_split()?.test,
    };
    if keys.is_empty() {
        bail!("no items to vote on");
    }
    let normalizer = pipeline.normalizer()?;
    let threshold = pipeline.config.evaluation.threshold;
    let mode = pipeline.vote_mode();
    let mut correct = 0usize;
    for key in &keys {
        let votes: BTreeMap<u8, String> = configs
            .iter()
            .filter_map(|config| {
                matrix
                    .get(config.turn_id, key)
                    .filter(|p| p.is_ok())
                    .map(|p| (config.turn_id, p.text.clone()))
            })
            .collect();
        let outcome = majority_vote(&votes, &normalizer, threshold, mode);
        let truths: Vec<String> = pipeline
            .corpus
            .truth(key)
            .expect("keys come from this corpus")
            .accepted_diagnoses
            .iter()
            .map(|d| normalizer.normalize(d))
            .collect();
        let (verdict, winner_text) = match &outcome.winner {
            Some(winner) if is_match(winner, &truths, threshold) => {
                correct += 1;
                ("correct", winner.clone())
            }
            Some(winner) => ("wrong", winner.clone()),
            None => ("wrong", "<no votes>".to_string()),
        };
        let tie = if outcome.tie_broken { " (tie broken)" } else { "" };
        println!(
            "{} / {}: \"{winner_text}\"{tie} — {verdict}",
            key.note_id(),
            key.medication()
        );
    }
    println!(
        "vote: {correct}/{} correct = {:.4}",
        keys.len(),
        correct as f64 / keys.len() as f64
    );
    Ok(())
}

/// Same membership, counts, and split sides — accuracy is recomputed, so
/// formatting precision in the CSV is not compared.
fn scores_agree(persisted: &[CombinationScore], fresh: &[CombinationScore]) -> bool {
    persisted.len() == fresh.len()
        && persisted.iter().zip(fresh).all(|(a, b)| {
            a.turns == b.turns && a.correct == b.correct && a.total == b.total && a.split == b.split
        })
}

pub fn cmd_analyze(pipeline: &Pipeline, ensemble: &Option<Vec<u8>>) -> Result<()> {
    let scores_path = pipeline.scores_path();
    if !scores_path.exists() {
        bail!(
            "no sweep output at {}; run `consensus-dx sweep` first",
            scores_path.display()
        );
    }
    let ensemble_override = match ensemble {
        Some(ids) => Some(
            pipeline
                .select_turns(&Some(ids.clone()))?
                .iter()
                .map(|c| c.turn_id)
                .collect(),
        ),
        None => None,
    };

    let split = pipeline.make_split()?;
    let matrix = pipeline.load_matrix()?;
    let train = pipeline.scoring_table(&matrix, &split.train, Side::Train)?;
    let test = pipeline.scoring_table(&matrix, &split.test, Side::Test)?;

    let persisted = load_scores_csv(&scores_path)?;
    let k = pipeline.config.evaluation.subset_size;
    let fresh = train.sweep(k).map_err(|err| match err {
        EvalError::BadSubsetSize { .. } => usage(err.to_string()),
        other => anyhow::Error::new(other),
    })?;
    if !scores_agree(&persisted, &fresh) {
        bail!(
            "{} does not match the current corpus, grid, or settings; \
             re-run `consensus-dx sweep`",
            scores_path.display()
        );
    }

    let options = AnalyzeOptions {
        threshold: pipeline.config.evaluation.threshold,
        subset_size: k,
        top_n: pipeline.config.evaluation.top_n,
        agreement_size: k,
        ensemble_size: k,
        ensemble_override,
    };
    let report = analyze(&train, &test, &fresh, &options).map_err(|err| match err {
        AnalyzerError::BadTopN { .. } => usage(err.to_string()),
        other => anyhow::Error::new(other),
    })?;

    save_frequency_csv(
        &pipeline.config.artifact("frequency.csv"),
        &report.turn_frequencies,
    )?;
    save_intersection_csv(
        &pipeline.config.artifact("intersection.csv"),
        &report.intersection,
    )?;
    save_report(&pipeline.config.artifact("report.json"), &report)?;
    print_report(&report);
    Ok(())
}

pub fn print_report(report: &AnalysisReport) {
    let turn_list = |turns: &[u8]| {
        turns
            .iter()
            .map(u8::to_string)
            .collect::<Vec<_>>()
            .join(", ")
    };
    let source = match report.ensemble_source {
        EnsembleSource::HighFrequency => "high-side frequency",
        EnsembleSource::OverallFrequencyFallback => "overall-frequency fallback",
        EnsembleSource::Override => "explicit override",
    };
    println!(
        "analysis: threshold {:.2}, subset size {}, top-n {}",
        report.threshold, report.subset_size, report.top_n
    );
    println!(
        "train ({} items, {} combinations: {} high / {} low)",
        report.train.items,
        report.train.high_count + report.train.low_count,
        report.train.high_count,
        report.train.low_count
    );
    println!(
        "  best single:       {}",
        describe_combo(&report.train.best_single)
    );
    println!(
        "  best combination:  {}",
        describe_combo(&report.train.best_combination)
    );
    println!(
        "  worst combination: {}",
        describe_combo(&report.train.worst_combination)
    );
    println!("agreed turns: {}", turn_list(&report.agreed_turns));
    println!(
        "selected ensemble [{source}]: {}",
        turn_list(&report.selected_ensemble)
    );
    println!("test ({} items)", report.test.items);
    println!(
        "  best single: {}",
        describe_combo(&report.test.best_single)
    );
    println!("  ensemble:    {}", describe_combo(&report.test.ensemble));
}

pub fn cmd_report(config: &RunConfig) -> Result<()> {
    let path = config.artifact("report.json");
    let report = consensus_dx_core::analyzer::load_report(&path)
        .map_err(|err| anyhow::anyhow!("{err}; run `consensus-dx analyze` first"))?;
    print_report(&report);
    Ok(())
}
