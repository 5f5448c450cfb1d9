//! Offline analysis of grid tables and run exports: extremes, min-max
//! normalized histograms, marginal means, and convergence series.

use std::fs;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::dataio::{GridTable, Split};
use crate::evaluator::{EvalError, Evaluator, GridReplay, Objective};
use crate::harness::RunRecord;
use crate::metrics::Metric;
use crate::scalar::Scalar;
use crate::searchspace::{ParamName, SearchSpace};

pub const ANALYSIS_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_BINS: usize = 10;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("bin count must be at least 1")]
    NoBins,
    #[error("nothing to analyze: {0}")]
    Empty(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// Mean score of every configuration, indexed by ordinal.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigMeans<S> {
    pub metric: Metric,
    pub split: Split,
    pub means: Vec<S>,
}

impl<S: Scalar> ConfigMeans<S> {
    pub fn from_table(space: &SearchSpace, table: &GridTable<S>, metric: Metric, split: Split) -> Result<Self, AnalysisError> {
        let replay = GridReplay::new(space.clone(), table.clone())?;
        Self::from_replay(&replay, metric, split)
    }

    pub fn from_replay(replay: &GridReplay<S>, metric: Metric, split: Split) -> Result<Self, AnalysisError> {
        if metric != Metric::ContextMrr {
            let c = replay.completeness(metric, split);
            if !c.is_complete() {
                return Err(EvalError::Incomplete(c.describe(5)).into());
            }
        }
        let objective = Objective::single(metric);
        let means = replay
            .space()
            .enumerate()
            .iter()
            .map(|config| replay.evaluate(config, split, &objective).map(|r| r.objective_score))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ConfigMeans { metric, split, means })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extreme<S> {
    pub ordinal: usize,
    pub score: S,
}

/// Worst and best configuration means. Ties go to the lowest ordinal.
pub fn grid_extremes<S: Scalar>(means: &ConfigMeans<S>) -> Result<(Extreme<S>, Extreme<S>), AnalysisError> {
    let mut it = means.means.iter().copied().enumerate();
    let (o0, s0) = it.next().ok_or_else(|| AnalysisError::Empty("no configurations".into()))?;
    let mut worst = Extreme { ordinal: o0, score: s0 };
    let mut best = worst.clone();
    for (o, s) in it {
        if s < worst.score {
            worst = Extreme { ordinal: o, score: s };
        }
        if s > best.score {
            best = Extreme { ordinal: o, score: s };
        }
    }
    Ok((worst, best))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram<S> {
    pub counts: Vec<usize>,
    /// Per-configuration normalized score in `[0, 1]`; all zero when degenerate.
    pub normalized: Vec<S>,
    /// Bin of each configuration.
    pub assignment: Vec<usize>,
    /// Best equals worst: every configuration lands in the first bin.
    pub degenerate: bool,
}

/// Min-max normalizes `values` and counts them into `bins` uniform bins over `[0, 1]`.
///
/// Bins are half-open `[a, b)` except the last, which is closed.
pub fn normalized_bins<S: Scalar>(values: &[S], bins: usize) -> Result<Histogram<S>, AnalysisError> {
    if bins == 0 {
        return Err(AnalysisError::NoBins);
    }
    let (lo, hi) = values
        .iter()
        .fold(None, |acc: Option<(S, S)>, &v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((if v < lo { v } else { lo }, if v > hi { v } else { hi })),
        })
        .ok_or_else(|| AnalysisError::Empty("no scores".into()))?;
    let degenerate = !(hi > lo);
    let mut counts = vec![0; bins];
    let mut normalized = Vec::with_capacity(values.len());
    let mut assignment = Vec::with_capacity(values.len());
    let width = S::from_count(bins);
    for &v in values {
        let x = if degenerate { S::zero() } else { (v - lo) / (hi - lo) };
        let scaled = x * width;
        // largest k with k <= x * bins, clamped so that x = 1 falls in the last bin
        let mut k = 0;
        while k + 1 < bins && S::from_count(k + 1) <= scaled {
            k += 1;
        }
        counts[k] += 1;
        normalized.push(x);
        assignment.push(k);
    }
    Ok(Histogram { counts, normalized, assignment, degenerate })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginalRow<S> {
    pub param: ParamName,
    pub value_index: usize,
    pub label: String,
    pub configs: usize,
    pub mean: S,
    /// Mean minus the grand mean over all configurations.
    pub delta: S,
}

/// Mean score over all configurations containing each parameter value.
pub fn marginal_means<S: Scalar>(space: &SearchSpace, means: &ConfigMeans<S>) -> Result<Vec<MarginalRow<S>>, AnalysisError> {
    let grand = S::mean(&means.means).ok_or_else(|| AnalysisError::Empty("no configurations".into()))?;
    let mut rows = Vec::new();
    for param in ParamName::ALL {
        for value_index in 0..space.cardinality(param) {
            let subset: Vec<S> = means
                .means
                .iter()
                .enumerate()
                .filter(|(o, _)| space.coords_of_ordinal(*o).expect("ordinal in range").get(param) == value_index)
                .map(|(_, &m)| m)
                .collect();
            let mean = S::mean(&subset).expect("every value appears in some configuration");
            rows.push(MarginalRow {
                param,
                value_index,
                label: space.value_label(param, value_index),
                configs: subset.len(),
                mean,
                delta: mean - grand,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergencePoint<S> {
    pub iteration: usize,
    pub mean_test: S,
    pub se_test: f64,
    pub mean_best_dev: Option<S>,
    /// Best achievable score over the full grid, when known.
    pub grid_max: Option<S>,
}

pub fn convergence_series<S: Scalar>(record: &RunRecord<S>, grid_max: Option<S>) -> Vec<ConvergencePoint<S>> {
    record
        .aggregates
        .iter()
        .map(|a| ConvergencePoint {
            iteration: a.iteration,
            mean_test: a.mean_test,
            se_test: a.se_test,
            mean_best_dev: a.mean_best_dev,
            grid_max,
        })
        .collect()
}

fn write_csv<R: Serialize>(path: &Path, kind: &str, rows: impl IntoIterator<Item = R>) -> Result<(), AnalysisError> {
    let io = |e: &dyn std::fmt::Display| AnalysisError::Io { path: path.display().to_string(), message: e.to_string() };
    let mut out = format!("# ragtune-analysis {kind} format_version={ANALYSIS_FORMAT_VERSION}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        for r in rows {
            w.serialize(r).map_err(|e| io(&e))?;
        }
        w.flush().map_err(|e| io(&e))?;
    }
    fs::write(path, out).map_err(|e| io(&e))
}

#[derive(Serialize)]
struct ExtremeRow {
    which: &'static str,
    ordinal: usize,
    config: String,
    score: String,
}

pub fn write_extremes<S: Scalar>(
    path: &Path,
    space: &SearchSpace,
    worst: &Extreme<S>,
    best: &Extreme<S>,
) -> Result<(), AnalysisError> {
    let row = |which, e: &Extreme<S>| ExtremeRow {
        which,
        ordinal: e.ordinal,
        config: describe_config(space, e.ordinal),
        score: e.score.to_string(),
    };
    write_csv(path, "extremes", [row("worst", worst), row("best", best)])
}

#[derive(Serialize)]
struct BinRow {
    bin: usize,
    lower: f64,
    upper: f64,
    count: usize,
}

pub fn write_bins<S: Scalar>(path: &Path, hist: &Histogram<S>) -> Result<(), AnalysisError> {
    let n = hist.counts.len() as f64;
    write_csv(
        path,
        if hist.degenerate { "bins degenerate=true" } else { "bins" },
        hist.counts.iter().enumerate().map(|(i, &count)| BinRow {
            bin: i,
            lower: i as f64 / n,
            upper: (i + 1) as f64 / n,
            count,
        }),
    )
}

#[derive(Serialize)]
struct MarginalCsv {
    parameter: &'static str,
    value: String,
    configs: usize,
    mean: String,
    delta: String,
}

pub fn write_marginals<S: Scalar>(path: &Path, rows: &[MarginalRow<S>]) -> Result<(), AnalysisError> {
    write_csv(
        path,
        "marginal_means",
        rows.iter().map(|r| MarginalCsv {
            parameter: r.param.as_str(),
            value: r.label.clone(),
            configs: r.configs,
            mean: r.mean.to_string(),
            delta: r.delta.to_string(),
        }),
    )
}

#[derive(Serialize)]
struct ConvergenceCsv {
    iteration: usize,
    mean_test: String,
    se_test: String,
    mean_best_dev: String,
    grid_max: String,
}

pub fn write_convergence<S: Scalar>(path: &Path, points: &[ConvergencePoint<S>]) -> Result<(), AnalysisError> {
    let opt = |v: Option<S>| v.map(|s| s.to_string()).unwrap_or_default();
    write_csv(
        path,
        "convergence",
        points.iter().map(|p| ConvergenceCsv {
            iteration: p.iteration,
            mean_test: p.mean_test.to_string(),
            se_test: p.se_test.to_string(),
            mean_best_dev: opt(p.mean_best_dev),
            grid_max: opt(p.grid_max),
        }),
    )
}

/// `chunk_size=256 chunk_overlap=0 ...` for one ordinal.
pub fn describe_config(space: &SearchSpace, ordinal: usize) -> String {
    let coords = space.coords_of_ordinal(ordinal).expect("ordinal in range");
    ParamName::ALL
        .iter()
        .map(|&p| format!("{}={}", p.as_str(), space.value_label(p, coords.get(p))))
        .collect::<Vec<_>>()
        .join(" ")
}
