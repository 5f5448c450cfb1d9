//! Coordinate-wise greedy search.
//!
//! Each parameter in the ordering is swept over all of its values. Preceding
//! parameters stay at their committed values. Following parameters take random
//! values. After the sweep, the best value is committed, and ties go to the
//! earliest value in list order. A candidate that already has a score of the
//! kind the sweep needs reuses that score instead of being evaluated again.
//! After the last parameter the search falls back to uniform random draws.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{random_unexplored, OptimizerError, ScoreKind, TrialHistory};
use crate::evaluator::EvalMode;
use crate::scalar::Scalar;
use crate::searchspace::{Coords, ParamName, SearchSpace};

/// How the values of the not-yet-swept parameters are drawn during a sweep.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuffixMode {
    /// One random suffix per sweep, shared by every candidate.
    #[default]
    Shared,
    /// A fresh random suffix per candidate.
    PerCandidate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Sweep {
    param: ParamName,
    kind: ScoreKind,
    /// One candidate per value of `param`, in value order.
    candidates: Vec<Coords>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyCursor {
    ordering: Vec<ParamName>,
    retrieval_sweeps: bool,
    suffix: SuffixMode,
    step: usize,
    committed: [Option<usize>; 5],
    /// The kind of score behind each commit, in ordering order.
    commit_kinds: Vec<ScoreKind>,
    sweep: Option<Sweep>,
}

impl GreedyCursor {
    pub fn new(ordering: Vec<ParamName>, retrieval_sweeps: bool, suffix: SuffixMode) -> Self {
        GreedyCursor {
            ordering,
            retrieval_sweeps,
            suffix,
            step: 0,
            committed: [None; 5],
            commit_kinds: Vec::new(),
            sweep: None,
        }
    }

    pub fn ordering(&self) -> &[ParamName] {
        &self.ordering
    }

    /// Index into the ordering of the parameter being swept; `ordering.len()` once all are committed.
    pub fn step(&self) -> usize {
        self.step
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.ordering.len()
    }

    pub fn committed(&self, param: ParamName) -> Option<usize> {
        self.committed[param.index()]
    }

    pub fn commit_kinds(&self) -> &[ScoreKind] {
        &self.commit_kinds
    }

    /// Candidates of the sweep in progress.
    pub fn pending_sweep(&self) -> Option<(ParamName, &[Coords])> {
        self.sweep.as_ref().map(|s| (s.param, s.candidates.as_slice()))
    }

    fn kind_for(&self, param: ParamName) -> ScoreKind {
        if self.retrieval_sweeps && param.is_index_param() {
            ScoreKind::Retrieval
        } else {
            ScoreKind::Objective
        }
    }

    /// Committed values, plus the best value seen so far in an unfinished sweep.
    pub fn current_choice<S: Scalar>(&self, history: &TrialHistory<S>, space: &SearchSpace) -> [Option<usize>; 5] {
        let mut choice = self.committed;
        if let Some(sweep) = &self.sweep {
            if let Some(v) = best_candidate(sweep, history, space) {
                choice[sweep.param.index()] = Some(v);
            }
        }
        choice
    }

    pub(super) fn suggest<S: Scalar>(
        &mut self,
        rng: &mut ChaCha8Rng,
        history: &TrialHistory<S>,
        space: &SearchSpace,
    ) -> Result<(Coords, EvalMode), OptimizerError> {
        loop {
            if self.is_finished() {
                let coords = random_unexplored(rng, history, space, ScoreKind::Objective)?;
                return Ok((coords, EvalMode::Full));
            }
            if self.sweep.is_none() {
                self.sweep = Some(self.open_sweep(rng, history, space));
            }
            let sweep = self.sweep.as_ref().expect("sweep opened");
            let pending = sweep
                .candidates
                .iter()
                .find(|c| !history.has_score(space.ordinal_of_coords(c), sweep.kind));
            if let Some(&coords) = pending {
                let mode = match sweep.kind {
                    ScoreKind::Objective => EvalMode::Full,
                    ScoreKind::Retrieval => EvalMode::RetrievalOnly,
                };
                return Ok((coords, mode));
            }
            let value = best_candidate(sweep, history, space).expect("every candidate scored");
            self.committed[sweep.param.index()] = Some(value);
            self.commit_kinds.push(sweep.kind);
            self.sweep = None;
            self.step += 1;
        }
    }

    fn open_sweep<S: Scalar>(&self, rng: &mut ChaCha8Rng, history: &TrialHistory<S>, space: &SearchSpace) -> Sweep {
        let param = self.ordering[self.step];
        let kind = self.kind_for(param);
        let following = &self.ordering[self.step + 1..];
        let mut prefix = Coords([0; 5]);
        for &p in &self.ordering[..self.step] {
            prefix = prefix.with(p, self.committed[p.index()].expect("preceding parameter committed"));
        }
        let suffixes = all_suffixes(space, following, prefix);
        let unexplored = |c: &Coords| !history.has_score(space.ordinal_of_coords(c), kind);
        let with_value = |base: Coords, v: usize| base.with(param, v);
        let values = 0..space.cardinality(param);

        let candidates = match self.suffix {
            SuffixMode::Shared => {
                let fresh: Vec<Coords> = suffixes
                    .iter()
                    .copied()
                    .filter(|&s| values.clone().all(|v| unexplored(&with_value(s, v))))
                    .collect();
                let pool = if fresh.is_empty() { &suffixes } else { &fresh };
                let base = pool[rng.gen_range(0..pool.len())];
                values.map(|v| with_value(base, v)).collect()
            }
            SuffixMode::PerCandidate => values
                .map(|v| {
                    let fresh: Vec<Coords> =
                        suffixes.iter().map(|&s| with_value(s, v)).filter(|c| unexplored(c)).collect();
                    if fresh.is_empty() {
                        with_value(suffixes[rng.gen_range(0..suffixes.len())], v)
                    } else {
                        fresh[rng.gen_range(0..fresh.len())]
                    }
                })
                .collect(),
        };
        Sweep { param, kind, candidates }
    }
}

/// Every assignment of the `following` parameters on top of `base`, in mixed-radix order.
fn all_suffixes(space: &SearchSpace, following: &[ParamName], base: Coords) -> Vec<Coords> {
    let mut out = vec![base];
    for &p in following {
        out = out.into_iter().flat_map(|c| (0..space.cardinality(p)).map(move |v| c.with(p, v))).collect();
    }
    out
}

/// Index of the best scored candidate, earliest value winning ties.
fn best_candidate<S: Scalar>(sweep: &Sweep, history: &TrialHistory<S>, space: &SearchSpace) -> Option<usize> {
    let mut best: Option<(usize, S)> = None;
    for c in &sweep.candidates {
        if let Some(score) = history.score_of(space.ordinal_of_coords(c), sweep.kind) {
            if best.map_or(true, |(_, b)| score > b) {
                best = Some((c.get(sweep.param), score));
            }
        }
    }
    best.map(|(v, _)| v)
}
