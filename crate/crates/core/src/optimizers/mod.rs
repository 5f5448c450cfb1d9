//! The five search algorithms behind one iterative contract:
//! `suggest -> evaluate -> record`.
//!
//! Optimizers never keep scores themselves; every decision is derived from
//! the [`TrialHistory`] passed to [`Optimizer::suggest`] plus the seeded RNG
//! and cursor in [`OptimizerState`], so a serialized state together with
//! its history resumes the identical trajectory.

mod greedy;
mod history;
mod tpe;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use greedy::{GreedyCursor, SuffixMode};
pub use history::{HistoryError, ScoreKind, Trial, TrialHistory};
pub use tpe::{density, split_trials, SplitRule, TpeSettings};

use crate::evaluator::EvalMode;
use crate::scalar::Scalar;
use crate::searchspace::{Coords, ParamName, RagConfig, SearchSpace};

#[derive(Debug, Error, PartialEq)]
pub enum OptimizerError {
    #[error("search space exhausted after {0} configurations")]
    Exhausted(usize),
    #[error("unknown algorithm `{0}` (expected one of: random, tpe, greedy_m, greedy_r, greedy_rcc)")]
    UnknownAlgorithm(String),
    #[error("greedy ordering must be a permutation of all five parameters")]
    InvalidOrdering,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Random,
    Tpe,
    GreedyM,
    GreedyR,
    GreedyRcc,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] =
        [Algorithm::Random, Algorithm::Tpe, Algorithm::GreedyM, Algorithm::GreedyR, Algorithm::GreedyRcc];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Random => "random",
            Algorithm::Tpe => "tpe",
            Algorithm::GreedyM => "greedy_m",
            Algorithm::GreedyR => "greedy_r",
            Algorithm::GreedyRcc => "greedy_rcc",
        }
    }

    /// Parameter order for the greedy variants.
    pub fn greedy_ordering(self) -> Option<[ParamName; 5]> {
        use ParamName::*;
        match self {
            Algorithm::GreedyM => Some([GenerativeModel, EmbeddingModel, ChunkSize, ChunkOverlap, TopK]),
            Algorithm::GreedyR | Algorithm::GreedyRcc => {
                Some([EmbeddingModel, ChunkSize, ChunkOverlap, GenerativeModel, TopK])
            }
            Algorithm::Random | Algorithm::Tpe => None,
        }
    }

    /// Whether index-parameter sweeps are scored on retrieval alone.
    pub fn retrieval_sweeps(self) -> bool {
        self == Algorithm::GreedyRcc
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = OptimizerError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| OptimizerError::UnknownAlgorithm(s.to_string()))
    }
}

/// The next configuration to evaluate and how to evaluate it.
#[derive(Debug, Clone, PartialEq)]
pub struct Suggestion {
    pub coords: Coords,
    pub ordinal: usize,
    pub config: RagConfig,
    pub mode: EvalMode,
}

/// Serializable optimizer state: algorithm, seeded RNG, and algorithm cursor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub algorithm: Algorithm,
    pub seed: u64,
    rng: ChaCha8Rng,
    pub tpe: TpeSettings,
    greedy: Option<GreedyCursor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    state: OptimizerState,
}

impl Optimizer {
    pub fn new(algorithm: Algorithm, seed: u64) -> Self {
        Self::with_settings(algorithm, seed, TpeSettings::default(), SuffixMode::Shared)
    }

    pub fn with_settings(algorithm: Algorithm, seed: u64, tpe: TpeSettings, suffix: SuffixMode) -> Self {
        let greedy = algorithm
            .greedy_ordering()
            .map(|ordering| GreedyCursor::new(ordering.to_vec(), algorithm.retrieval_sweeps(), suffix));
        Optimizer {
            state: OptimizerState { algorithm, seed, rng: ChaCha8Rng::seed_from_u64(seed), tpe, greedy },
        }
    }

    /// Greedy optimizer over a custom parameter ordering.
    pub fn greedy_with_ordering(
        ordering: Vec<ParamName>,
        retrieval_sweeps: bool,
        seed: u64,
        suffix: SuffixMode,
    ) -> Result<Self, OptimizerError> {
        let mut sorted = ordering.clone();
        sorted.sort();
        if sorted != ParamName::ALL {
            return Err(OptimizerError::InvalidOrdering);
        }
        let algorithm = if retrieval_sweeps { Algorithm::GreedyRcc } else { Algorithm::GreedyM };
        Ok(Optimizer {
            state: OptimizerState {
                algorithm,
                seed,
                rng: ChaCha8Rng::seed_from_u64(seed),
                tpe: TpeSettings::default(),
                greedy: Some(GreedyCursor::new(ordering, retrieval_sweeps, suffix)),
            },
        })
    }

    pub fn from_state(state: OptimizerState) -> Self {
        Optimizer { state }
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    pub fn algorithm(&self) -> Algorithm {
        self.state.algorithm
    }

    pub fn greedy_cursor(&self) -> Option<&GreedyCursor> {
        self.state.greedy.as_ref()
    }

    /// Picks the next configuration. Never returns a configuration already scored the same way.
    pub fn suggest<S: Scalar>(&mut self, history: &TrialHistory<S>, space: &SearchSpace) -> Result<Suggestion, OptimizerError> {
        let OptimizerState { algorithm, rng, tpe, greedy, .. } = &mut self.state;
        let (coords, mode) = match algorithm {
            Algorithm::Random => (random_unexplored(rng, history, space, ScoreKind::Objective)?, EvalMode::Full),
            Algorithm::Tpe => (tpe::suggest(tpe, rng, history, space)?, EvalMode::Full),
            Algorithm::GreedyM | Algorithm::GreedyR | Algorithm::GreedyRcc => {
                greedy.as_mut().expect("greedy cursor").suggest(rng, history, space)?
            }
        };
        Ok(Suggestion { coords, ordinal: space.ordinal_of_coords(&coords), config: space.config_of_coords(&coords), mode })
    }
}

/// Uniform draw over configurations lacking a `kind` score.
///
/// Objective draws exclude every configuration already present in the history.
/// Only retrieval-scored configurations of greedy_rcc may be drawn again, and
/// only after all unvisited configurations are used up.
pub(crate) fn random_unexplored<S: Scalar>(
    rng: &mut ChaCha8Rng,
    history: &TrialHistory<S>,
    space: &SearchSpace,
    kind: ScoreKind,
) -> Result<Coords, OptimizerError> {
    let mut open: Vec<usize> = (0..space.total_size()).filter(|&o| !history.visited(o)).collect();
    if open.is_empty() {
        open = (0..space.total_size()).filter(|&o| !history.has_score(o, kind)).collect();
    }
    if open.is_empty() {
        return Err(OptimizerError::Exhausted(history.len()));
    }
    let pick = open[rng.gen_range(0..open.len())];
    Ok(space.coords_of_ordinal(pick).expect("ordinal in range"))
}
