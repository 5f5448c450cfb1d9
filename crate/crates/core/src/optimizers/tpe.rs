//! Tree-structured Parzen Estimator over independent categorical parameters.
//!
//! After `n_startup` uniform draws, the objective-scored trials are split into
//! a good set and a bad set. For each parameter, smoothed categorical densities
//! are formed: `l` from the good set and `g` from the bad set, each
//! `(count + prior_weight) / (n + prior_weight * K)`. Candidates are sampled
//! from `l`, already-explored ones are dropped, and the candidate maximizing
//! `sum(log l - log g)` is returned. The first candidate drawn wins ties.

use rand::distributions::{Distribution, WeightedIndex};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{random_unexplored, OptimizerError, ScoreKind, Trial, TrialHistory};
use crate::scalar::Scalar;
use crate::searchspace::{Coords, ParamName, SearchSpace};

/// How many of `n` observations form the good set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRule {
    /// `ceil(gamma * sqrt(n))`.
    #[default]
    Sqrt,
    /// `ceil(gamma * n)`.
    Quantile,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TpeSettings {
    pub n_startup: usize,
    pub gamma: f64,
    pub n_candidates: usize,
    pub prior_weight: f64,
    pub split: SplitRule,
}

impl Default for TpeSettings {
    fn default() -> Self {
        TpeSettings { n_startup: 5, gamma: 0.25, n_candidates: 24, prior_weight: 1.0, split: SplitRule::Sqrt }
    }
}

impl TpeSettings {
    /// Size of the good set among `n` observations, at least one.
    pub fn n_good(&self, n: usize) -> usize {
        let raw = match self.split {
            SplitRule::Sqrt => self.gamma * (n as f64).sqrt(),
            SplitRule::Quantile => self.gamma * n as f64,
        };
        (raw.ceil() as usize).clamp(1, n.max(1))
    }
}

/// Smoothed categorical density of `param` over `trials`.
pub fn density<S: Scalar>(trials: &[&Trial<S>], space: &SearchSpace, param: ParamName, prior_weight: f64) -> Vec<f64> {
    let k = space.cardinality(param);
    let mut counts = vec![prior_weight; k];
    for t in trials {
        let coords = space.coords_of_config(&t.config).expect("trial config belongs to space");
        counts[coords.get(param)] += 1.0;
    }
    let total: f64 = counts.iter().sum();
    counts.into_iter().map(|c| c / total).collect()
}

/// Good and bad trials: objective-scored trials sorted best first, earlier iterations first on ties.
pub fn split_trials<'a, S: Scalar>(
    history: &'a TrialHistory<S>,
    settings: &TpeSettings,
) -> (Vec<&'a Trial<S>>, Vec<&'a Trial<S>>) {
    let mut ranked: Vec<&Trial<S>> = history.objective_trials().collect();
    ranked.sort_by(|a, b| b.score().partial_cmp(&a.score()).unwrap_or(std::cmp::Ordering::Equal));
    let n_good = settings.n_good(ranked.len());
    let bad = ranked.split_off(n_good.min(ranked.len()));
    (ranked, bad)
}

pub(super) fn suggest<S: Scalar>(
    settings: &TpeSettings,
    rng: &mut ChaCha8Rng,
    history: &TrialHistory<S>,
    space: &SearchSpace,
) -> Result<Coords, OptimizerError> {
    let observed = history.objective_trials().count();
    if observed < settings.n_startup.max(1) {
        return random_unexplored(rng, history, space, ScoreKind::Objective);
    }
    let (good, bad) = split_trials(history, settings);
    let l: Vec<Vec<f64>> = ParamName::ALL.iter().map(|&p| density(&good, space, p, settings.prior_weight)).collect();
    let g: Vec<Vec<f64>> = ParamName::ALL.iter().map(|&p| density(&bad, space, p, settings.prior_weight)).collect();
    let samplers: Vec<WeightedIndex<f64>> =
        l.iter().map(|w| WeightedIndex::new(w).expect("smoothed weights are positive")).collect();

    let mut best: Option<(f64, Coords)> = None;
    for _ in 0..settings.n_candidates {
        let mut values = [0usize; 5];
        for (i, sampler) in samplers.iter().enumerate() {
            values[i] = sampler.sample(rng);
        }
        let coords = Coords(values);
        if history.has_score(space.ordinal_of_coords(&coords), ScoreKind::Objective) {
            continue;
        }
        let ei: f64 = (0..5).map(|i| l[i][values[i]].ln() - g[i][values[i]].ln()).sum();
        if best.map_or(true, |(b, _)| ei > b) {
            best = Some((ei, coords));
        }
    }
    match best {
        Some((_, coords)) => Ok(coords),
        None => random_unexplored(rng, history, space, ScoreKind::Objective),
    }
}
