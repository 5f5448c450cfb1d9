//! Budgeted multi-seed optimization runs with per-iteration test tracking and
//! cost accounting, run export, and grid filling.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{DataError, GridKey, GridTable, Split};
use crate::evaluator::{best_so_far, CostDelta, EvalError, EvalMode, EvalResult, Evaluator, Objective};
use crate::metrics::Metric;
use crate::optimizers::{
    Algorithm, HistoryError, Optimizer, OptimizerError, OptimizerState, ScoreKind, SuffixMode, TpeSettings, Trial,
    TrialHistory,
};
use crate::scalar::{score_serde, Scalar};
use crate::searchspace::{IndexConfig, SearchSpace};

pub const RUN_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid run: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error(transparent)]
    History(#[from] HistoryError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Space(#[from] crate::searchspace::SpaceError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Format { path: PathBuf, line: usize, message: String },
    #[error("thread pool: {0}")]
    Pool(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct RunSpec<S: Scalar> {
    pub algorithm: Algorithm,
    pub objective: Objective<S>,
    pub budget: usize,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub tpe: TpeSettings,
    #[serde(default)]
    pub suffix_mode: SuffixMode,
    /// Worker threads for seed-level parallelism; 0 uses all cores.
    #[serde(default)]
    pub parallelism: usize,
}

impl<S: Scalar> RunSpec<S> {
    pub fn new(algorithm: Algorithm, objective: Objective<S>, budget: usize, seeds: Vec<u64>) -> Self {
        RunSpec { algorithm, objective, budget, seeds, tpe: TpeSettings::default(), suffix_mode: SuffixMode::Shared, parallelism: 0 }
    }

    pub fn validate(&self, space: &SearchSpace) -> Result<(), HarnessError> {
        if self.budget == 0 {
            return Err(HarnessError::InvalidSpec("budget must be at least 1".into()));
        }
        if self.budget > space.total_size() {
            return Err(HarnessError::InvalidSpec(format!(
                "budget {} exceeds the {} configurations of the space",
                self.budget,
                space.total_size()
            )));
        }
        if self.seeds.is_empty() {
            return Err(HarnessError::InvalidSpec("at least one seed is required".into()));
        }
        let distinct: BTreeSet<_> = self.seeds.iter().collect();
        if distinct.len() != self.seeds.len() {
            return Err(HarnessError::InvalidSpec("seeds must be distinct".into()));
        }
        if !(0.0..=1.0).contains(&self.tpe.gamma) || self.tpe.n_candidates == 0 || self.tpe.prior_weight <= 0.0 {
            return Err(HarnessError::InvalidSpec("tpe settings need gamma in [0, 1], candidates >= 1, prior weight > 0".into()));
        }
        Ok(())
    }

    fn optimizer(&self, seed: u64) -> Optimizer {
        Optimizer::with_settings(self.algorithm, seed, self.tpe, self.suffix_mode)
    }
}

/// Cumulative spend at one point of a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub indexes_charged: usize,
    pub embedded_tokens: u64,
    pub generation_input_tokens: u64,
    pub generation_output_tokens: u64,
}

impl LedgerSnapshot {
    pub fn generation_tokens(&self) -> u64 {
        self.generation_input_tokens + self.generation_output_tokens
    }

    pub fn dominates(&self, earlier: &LedgerSnapshot) -> bool {
        self.indexes_charged >= earlier.indexes_charged
            && self.embedded_tokens >= earlier.embedded_tokens
            && self.generation_input_tokens >= earlier.generation_input_tokens
            && self.generation_output_tokens >= earlier.generation_output_tokens
    }
}

/// Token spend where each index is charged for embedding only once.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    charged: BTreeSet<String>,
    totals: LedgerSnapshot,
    snapshots: Vec<LedgerSnapshot>,
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds generation tokens, and embedding tokens if `index` is new. Returns whether the index was new.
    pub fn charge(&mut self, index: &IndexConfig, cost: &CostDelta) -> bool {
        self.totals.generation_input_tokens += cost.generation_input_tokens;
        self.totals.generation_output_tokens += cost.generation_output_tokens;
        let fresh = self.charged.insert(index.fingerprint());
        if fresh {
            self.totals.embedded_tokens += cost.embedded_tokens;
            self.totals.indexes_charged += 1;
        }
        fresh
    }

    pub fn snapshot(&mut self) -> LedgerSnapshot {
        self.snapshots.push(self.totals);
        self.totals
    }

    pub fn totals(&self) -> LedgerSnapshot {
        self.totals
    }

    pub fn snapshots(&self) -> &[LedgerSnapshot] {
        &self.snapshots
    }

    pub fn is_charged(&self, index: &IndexConfig) -> bool {
        self.charged.contains(&index.fingerprint())
    }
}

/// State after one iteration of one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct IterationRecord<S: Scalar> {
    pub iteration: usize,
    pub ordinal: usize,
    pub mode: EvalMode,
    /// Score of this iteration's trial: the objective, or context correctness for retrieval-only trials.
    #[serde(with = "score_serde")]
    pub score: S,
    /// Best objective score on dev so far; absent while only retrieval-only trials exist.
    #[serde(with = "score_serde::option")]
    pub best_dev: Option<S>,
    pub best_ordinal: usize,
    /// Objective on the test split of the current dev-best configuration.
    #[serde(with = "score_serde")]
    pub test_of_best: S,
    pub ledger: LedgerSnapshot,
    pub test_ledger: LedgerSnapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SeedRun<S: Scalar> {
    pub seed: u64,
    pub history: TrialHistory<S>,
    pub iterations: Vec<IterationRecord<S>>,
}

impl<S: Scalar> SeedRun<S> {
    pub fn final_iteration(&self) -> Option<&IterationRecord<S>> {
        self.iterations.last()
    }
}

/// Cross-seed statistics at one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct IterationAggregate<S: Scalar> {
    pub iteration: usize,
    pub seeds: usize,
    #[serde(with = "score_serde")]
    pub mean_test: S,
    /// Sample standard deviation over sqrt(n); 0 for a single seed.
    #[serde(with = "score_serde")]
    pub se_test: f64,
    /// Mean dev-best objective, present once every seed has one.
    #[serde(with = "score_serde::option")]
    pub mean_best_dev: Option<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord<S: Scalar> {
    pub spec: RunSpec<S>,
    pub space: SearchSpace,
    pub seeds: Vec<SeedRun<S>>,
    pub aggregates: Vec<IterationAggregate<S>>,
}

impl<S: Scalar> RunRecord<S> {
    pub fn iterations(&self) -> usize {
        self.aggregates.len()
    }
}

/// Mean and standard error of `values`.
pub fn mean_and_se<S: Scalar>(values: &[S]) -> Option<(S, f64)> {
    let mean = S::mean(values)?;
    let n = values.len();
    if n < 2 {
        return Some((mean, 0.0));
    }
    let m = mean.to_f64_lossy();
    let var = values.iter().map(|v| (v.to_f64_lossy() - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    Some((mean, (var / n as f64).sqrt()))
}

pub fn aggregate_seeds<S: Scalar>(seeds: &[SeedRun<S>]) -> Vec<IterationAggregate<S>> {
    let len = seeds.iter().map(|s| s.iterations.len()).min().unwrap_or(0);
    (0..len)
        .map(|i| {
            let tests: Vec<S> = seeds.iter().map(|s| s.iterations[i].test_of_best).collect();
            let (mean_test, se_test) = mean_and_se(&tests).expect("at least one seed");
            let devs: Option<Vec<S>> = seeds.iter().map(|s| s.iterations[i].best_dev).collect();
            IterationAggregate {
                iteration: i + 1,
                seeds: seeds.len(),
                mean_test,
                se_test,
                mean_best_dev: devs.and_then(|d| S::mean(&d)),
            }
        })
        .collect()
}

/// Everything needed to continue one seed after an interruption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SeedProgress<S: Scalar> {
    pub run: SeedRun<S>,
    pub optimizer: OptimizerState,
    pub ledger: CostLedger,
    pub test_ledger: CostLedger,
    /// Test objective per configuration ordinal, so each is evaluated and charged once.
    #[serde(with = "score_map")]
    test_cache: BTreeMap<usize, S>,
}

mod score_map {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::scalar::Scalar;

    pub fn serialize<S: Scalar, Ser: Serializer>(map: &BTreeMap<usize, S>, ser: Ser) -> Result<Ser::Ok, Ser::Error> {
        map.iter().map(|(k, v)| (k, v.to_string())).collect::<BTreeMap<_, _>>().serialize(ser)
    }

    pub fn deserialize<'de, S: Scalar, D: Deserializer<'de>>(de: D) -> Result<BTreeMap<usize, S>, D::Error> {
        let raw = BTreeMap::<usize, String>::deserialize(de)?;
        raw.into_iter()
            .map(|(k, v)| S::parse_score(&v).map(|s| (k, s)).ok_or_else(|| serde::de::Error::custom(format!("invalid score `{v}`"))))
            .collect()
    }
}

impl<S: Scalar> SeedProgress<S> {
    fn start(spec: &RunSpec<S>, seed: u64) -> Self {
        SeedProgress {
            run: SeedRun { seed, history: TrialHistory::new(), iterations: Vec::new() },
            optimizer: spec.optimizer(seed).state().clone(),
            ledger: CostLedger::new(),
            test_ledger: CostLedger::new(),
            test_cache: BTreeMap::new(),
        }
    }

    fn is_done(&self, budget: usize) -> bool {
        self.run.iterations.len() >= budget
    }

    /// Runs iterations until the budget is spent. On error, the progress is left at the last completed iteration.
    fn advance<E: Evaluator<S> + ?Sized>(&mut self, spec: &RunSpec<S>, evaluator: &E) -> Result<(), HarnessError> {
        let space = evaluator.space();
        while !self.is_done(spec.budget) {
            let mut optimizer = Optimizer::from_state(self.optimizer.clone());
            let suggestion = optimizer.suggest(&self.run.history, space)?;
            let result: EvalResult<S> = match suggestion.mode {
                EvalMode::Full => evaluator.evaluate(&suggestion.config, Split::Dev, &spec.objective)?,
                EvalMode::RetrievalOnly => evaluator.evaluate_retrieval_only(&suggestion.config, Split::Dev)?,
            };
            let kind = match suggestion.mode {
                EvalMode::Full => ScoreKind::Objective,
                EvalMode::RetrievalOnly => ScoreKind::Retrieval,
            };
            let mut history = self.run.history.clone();
            history.record(suggestion.ordinal, suggestion.config.clone(), kind, result.objective_score, result.cost)?;
            let best: &Trial<S> = best_so_far(&history)?;
            let best_dev = (best.kind() == ScoreKind::Objective).then(|| best.score());
            let best_ordinal = best.ordinal;

            let mut test_ledger = self.test_ledger.clone();
            let test_of_best = match self.test_cache.get(&best_ordinal) {
                Some(&s) => s,
                None => {
                    let test = evaluator.evaluate(&best.config, Split::Test, &spec.objective)?;
                    test_ledger.charge(&best.config.index, &test.cost);
                    test.objective_score
                }
            };

            // everything fallible is done; commit the iteration
            self.ledger.charge(&suggestion.config.index, &result.cost);
            let ledger = self.ledger.snapshot();
            let test_snapshot = test_ledger.snapshot();
            self.test_ledger = test_ledger;
            self.test_cache.insert(best_ordinal, test_of_best);
            self.run.iterations.push(IterationRecord {
                iteration: history.len(),
                ordinal: suggestion.ordinal,
                mode: suggestion.mode,
                score: result.objective_score,
                best_dev,
                best_ordinal,
                test_of_best,
                ledger,
                test_ledger: test_snapshot,
            });
            self.run.history = history;
            self.optimizer = optimizer.state().clone();
        }
        Ok(())
    }
}

/// A run interrupted by a service outage, resumable with [`resume`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Checkpoint<S: Scalar> {
    pub format_version: u32,
    pub space_fingerprint: String,
    pub spec: RunSpec<S>,
    pub progress: Vec<SeedProgress<S>>,
    pub reason: String,
}

impl<S: Scalar> Checkpoint<S> {
    pub fn store(&self, path: &Path) -> Result<(), HarnessError> {
        let text = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        fs::write(path, text).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let cp: Checkpoint<S> = serde_json::from_str(&text).map_err(|e| HarnessError::Format {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if cp.format_version != RUN_FORMAT_VERSION {
            return Err(HarnessError::Format {
                path: path.to_path_buf(),
                line: 1,
                message: format!("unsupported checkpoint version {}", cp.format_version),
            });
        }
        Ok(cp)
    }

    pub fn completed_iterations(&self) -> usize {
        self.progress.iter().map(|p| p.run.iterations.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunOutcome<S: Scalar> {
    Complete(RunRecord<S>),
    Suspended(Checkpoint<S>),
}

impl<S: Scalar> RunOutcome<S> {
    pub fn complete(self) -> Option<RunRecord<S>> {
        match self {
            RunOutcome::Complete(r) => Some(r),
            RunOutcome::Suspended(_) => None,
        }
    }
}

/// Checks the run against the evaluator before any iteration happens.
pub fn preflight<S: Scalar, E: Evaluator<S> + ?Sized>(spec: &RunSpec<S>, evaluator: &E) -> Result<(), HarnessError> {
    spec.validate(evaluator.space())?;
    if spec.algorithm.retrieval_sweeps() && !evaluator.context_correctness_defined(Split::Dev) {
        return Err(HarnessError::InvalidSpec(format!(
            "{} scores retrieval sweeps by context correctness, but no dev question has gold documents",
            spec.algorithm
        )));
    }
    evaluator.preflight(&spec.objective, &[Split::Dev, Split::Test])?;
    Ok(())
}

pub fn run<S: Scalar, E: Evaluator<S>>(spec: &RunSpec<S>, evaluator: &E) -> Result<RunOutcome<S>, HarnessError> {
    preflight(spec, evaluator)?;
    let progress = spec.seeds.iter().map(|&seed| SeedProgress::start(spec, seed)).collect();
    drive(spec.clone(), evaluator, progress)
}

pub fn resume<S: Scalar, E: Evaluator<S>>(checkpoint: Checkpoint<S>, evaluator: &E) -> Result<RunOutcome<S>, HarnessError> {
    let fp = evaluator.space().fingerprint();
    if checkpoint.space_fingerprint != fp {
        return Err(HarnessError::InvalidSpec(format!(
            "checkpoint was taken over space {} but the evaluator uses {fp}",
            checkpoint.space_fingerprint
        )));
    }
    preflight(&checkpoint.spec, evaluator)?;
    drive(checkpoint.spec, evaluator, checkpoint.progress)
}

fn drive<S: Scalar, E: Evaluator<S>>(
    spec: RunSpec<S>,
    evaluator: &E,
    mut progress: Vec<SeedProgress<S>>,
) -> Result<RunOutcome<S>, HarnessError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.parallelism)
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))?;
    let results: Vec<Result<(), HarnessError>> =
        pool.install(|| progress.par_iter_mut().map(|p| p.advance(&spec, evaluator)).collect());

    let mut suspended = None;
    for r in results {
        match r {
            Ok(()) => {}
            Err(HarnessError::Eval(e)) if e.is_suspendable() => {
                suspended.get_or_insert(e.to_string());
            }
            Err(e) => return Err(e),
        }
    }
    if let Some(reason) = suspended {
        return Ok(RunOutcome::Suspended(Checkpoint {
            format_version: RUN_FORMAT_VERSION,
            space_fingerprint: evaluator.space().fingerprint(),
            spec,
            progress,
            reason,
        }));
    }
    let seeds: Vec<SeedRun<S>> = progress.into_iter().map(|p| p.run).collect();
    let aggregates = aggregate_seeds(&seeds);
    Ok(RunOutcome::Complete(RunRecord { spec, space: evaluator.space().clone(), seeds, aggregates }))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case", bound = "")]
enum ExportRow<S: Scalar> {
    Header {
        format_version: u32,
        algorithm: Algorithm,
        objective: Objective<S>,
        budget: usize,
        seeds: Vec<u64>,
        tpe: TpeSettings,
        suffix_mode: SuffixMode,
        space_fingerprint: String,
        space: SearchSpace,
    },
    Trial {
        seed: u64,
        #[serde(flatten)]
        row: IterationRecord<S>,
        cost: CostDelta,
    },
    Aggregate(IterationAggregate<S>),
}

/// Writes a run as JSON lines: one header, one row per (seed, iteration), one aggregate row per iteration.
pub fn export_run<S: Scalar>(record: &RunRecord<S>, path: &Path) -> Result<(), HarnessError> {
    if record.seeds.is_empty() {
        return Err(HarnessError::InvalidSpec("a run without seeds cannot be exported".into()));
    }
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    let mut line = |row: &ExportRow<S>| -> Result<(), HarnessError> {
        let text = serde_json::to_string(row).expect("row serializes");
        writeln!(out, "{text}").map_err(io_err(path))
    };
    line(&ExportRow::Header {
        format_version: RUN_FORMAT_VERSION,
        algorithm: record.spec.algorithm,
        objective: record.spec.objective.clone(),
        budget: record.spec.budget,
        seeds: record.spec.seeds.clone(),
        tpe: record.spec.tpe,
        suffix_mode: record.spec.suffix_mode,
        space_fingerprint: record.space.fingerprint(),
        space: record.space.clone(),
    })?;
    for seed in &record.seeds {
        for (it, trial) in seed.iterations.iter().zip(seed.history.trials()) {
            line(&ExportRow::Trial { seed: seed.seed, row: it.clone(), cost: trial.cost })?;
        }
    }
    for agg in &record.aggregates {
        line(&ExportRow::Aggregate(agg.clone()))?;
    }
    out.flush().map_err(io_err(path))
}

/// Reads a file written by [`export_run`].
pub fn load_run<S: Scalar>(path: &Path) -> Result<RunRecord<S>, HarnessError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let fmt_err = |line: usize, message: String| HarnessError::Format { path: path.to_path_buf(), line, message };
    let mut header = None;
    let mut trials: BTreeMap<u64, Vec<(IterationRecord<S>, CostDelta)>> = BTreeMap::new();
    let mut aggregates = Vec::new();
    for (i, text) in BufReader::new(file).lines().enumerate() {
        let text = text.map_err(io_err(path))?;
        if text.trim().is_empty() {
            continue;
        }
        let row: ExportRow<S> = serde_json::from_str(&text).map_err(|e| fmt_err(i + 1, e.to_string()))?;
        match row {
            ExportRow::Header { format_version, .. } if format_version != RUN_FORMAT_VERSION => {
                return Err(fmt_err(i + 1, format!("unsupported format_version {format_version}")));
            }
            h @ ExportRow::Header { .. } if header.is_none() && i == 0 => header = Some(h),
            ExportRow::Header { .. } => return Err(fmt_err(i + 1, "header must be the first and only header line".into())),
            ExportRow::Trial { seed, row, cost } => trials.entry(seed).or_default().push((row, cost)),
            ExportRow::Aggregate(a) => aggregates.push(a),
        }
    }
    let Some(ExportRow::Header { algorithm, objective, budget, seeds, tpe, suffix_mode, space_fingerprint, space, .. }) =
        header
    else {
        return Err(fmt_err(1, "missing header line".into()));
    };
    if space.fingerprint() != space_fingerprint {
        return Err(fmt_err(1, "space definition does not match its fingerprint".into()));
    }
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        let rows = trials.remove(&seed).unwrap_or_default();
        let mut history = TrialHistory::new();
        let mut iterations = Vec::with_capacity(rows.len());
        for (record, cost) in rows {
            let config = space.config_at(record.ordinal).map_err(|e| fmt_err(0, e.to_string()))?;
            let kind = match record.mode {
                EvalMode::Full => ScoreKind::Objective,
                EvalMode::RetrievalOnly => ScoreKind::Retrieval,
            };
            if record.iteration != history.len() + 1 {
                return Err(fmt_err(0, format!("seed {seed}: iteration {} out of order", record.iteration)));
            }
            history.record(record.ordinal, config, kind, record.score, cost)?;
            iterations.push(record);
        }
        runs.push(SeedRun { seed, history, iterations });
    }
    if let Some(extra) = trials.keys().next() {
        return Err(fmt_err(0, format!("trial rows for undeclared seed {extra}")));
    }
    let spec = RunSpec { algorithm, objective, budget, seeds, tpe, suffix_mode, parallelism: 0 };
    Ok(RunRecord { spec, space, seeds: runs, aggregates })
}

/// Questions to fill for one split. Context correctness rows exist only for `gold_qids`.
#[derive(Debug, Clone, PartialEq)]
pub struct FillPlan {
    pub split: Split,
    pub qids: Vec<String>,
    pub gold_qids: BTreeSet<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FillReport {
    pub evaluated: Vec<(Split, usize)>,
    pub already_complete: usize,
    /// Configs still lacking rows after evaluation, e.g. because generations failed.
    pub still_incomplete: Vec<(Split, usize)>,
    pub suspended: Option<String>,
}

impl FillReport {
    pub fn is_complete(&self) -> bool {
        self.suspended.is_none() && self.still_incomplete.is_empty()
    }
}

fn missing_rows<S: Scalar>(table: &GridTable<S>, ordinal: usize, plan: &FillPlan, metrics: &[Metric]) -> bool {
    metrics.iter().any(|&m| {
        plan.qids
            .iter()
            .filter(|q| m != Metric::ContextMrr || plan.gold_qids.contains(*q))
            .any(|q| table.get(ordinal, plan.split, m, q).is_none())
    })
}

/// Evaluates every configuration lacking rows and adds its scores and costs to `table`.
///
/// Complete configurations are skipped, so an interrupted fill resumes where it stopped.
/// `after_config` runs after each evaluated configuration, e.g. to persist the table.
pub fn fill_grid<S: Scalar, E: Evaluator<S> + ?Sized>(
    evaluator: &E,
    table: &mut GridTable<S>,
    plans: &[FillPlan],
    metrics: &[Metric],
    mut after_config: impl FnMut(&GridTable<S>) -> Result<(), HarnessError>,
) -> Result<FillReport, HarnessError> {
    let space = evaluator.space().clone();
    table.check_space(&space)?;
    let mut report = FillReport::default();
    for plan in plans {
        for ordinal in 0..space.total_size() {
            if !missing_rows(table, ordinal, plan, metrics) {
                report.already_complete += 1;
                continue;
            }
            let config = space.config_at(ordinal)?;
            let scored = match evaluator.evaluate_metrics(&config, plan.split, metrics, EvalMode::Full) {
                Ok(s) => s,
                Err(e) if e.is_suspendable() => {
                    report.suspended = Some(e.to_string());
                    return Ok(report);
                }
                Err(e) => return Err(e.into()),
            };
            let coords = space.coords_of_ordinal(ordinal)?;
            table.costs.index_tokens.entry(space.index_ordinal(&coords)).or_insert(scored.cost.embedded_tokens);
            for q in &scored.per_question {
                for (&metric, &score) in &q.scores {
                    if !metrics.contains(&metric) {
                        continue;
                    }
                    let key = GridKey { ordinal, split: plan.split, metric, qid: q.qid.clone() };
                    if table.get(ordinal, plan.split, metric, &q.qid).is_none() {
                        table.insert(key, score)?;
                    }
                }
                if let Some(tokens) = q.generation_tokens {
                    table.costs.generation.insert((ordinal, plan.split, q.qid.clone()), tokens);
                }
            }
            report.evaluated.push((plan.split, ordinal));
            if missing_rows(table, ordinal, plan, metrics) {
                report.still_incomplete.push((plan.split, ordinal));
            }
            after_config(table)?;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests;
