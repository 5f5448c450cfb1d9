use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluator::CostDelta;
use crate::scalar::{score_serde, Scalar};
use crate::searchspace::RagConfig;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HistoryError {
    #[error("trial iteration {got} does not follow {expected}")]
    NonConsecutive { expected: usize, got: usize },
    #[error("configuration {ordinal} already has a {kind:?} score")]
    Duplicate { ordinal: usize, kind: ScoreKind },
    #[error("trial {0} carries no score")]
    Unscored(usize),
}

/// Which score drove a trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Objective,
    /// Context correctness from a retrieval-only evaluation.
    Retrieval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Trial<S: Scalar> {
    pub iteration: usize,
    pub ordinal: usize,
    pub config: RagConfig,
    #[serde(with = "score_serde::option")]
    pub objective_score: Option<S>,
    #[serde(with = "score_serde::option")]
    pub retrieval_score: Option<S>,
    pub cost: CostDelta,
}

impl<S: Scalar> Trial<S> {
    pub fn kind(&self) -> ScoreKind {
        if self.objective_score.is_some() {
            ScoreKind::Objective
        } else {
            ScoreKind::Retrieval
        }
    }

    /// The score of this trial's kind.
    pub fn score(&self) -> S {
        self.objective_score.or(self.retrieval_score).expect("trial has a score")
    }
}

/// Ordered evaluation record for one optimizer run.
///
/// A configuration appears at most once per [`ScoreKind`]: greedy_rcc may
/// score a configuration by retrieval first and by the objective later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TrialHistory<S: Scalar> {
    trials: Vec<Trial<S>>,
}

impl<S: Scalar> Default for TrialHistory<S> {
    fn default() -> Self {
        TrialHistory { trials: Vec::new() }
    }
}

impl<S: Scalar> TrialHistory<S> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_trials(trials: Vec<Trial<S>>) -> Result<Self, HistoryError> {
        let mut h = Self::new();
        for t in trials {
            h.push(t)?;
        }
        Ok(h)
    }

    pub fn push(&mut self, trial: Trial<S>) -> Result<(), HistoryError> {
        let expected = self.trials.len() + 1;
        if trial.iteration != expected {
            return Err(HistoryError::NonConsecutive { expected, got: trial.iteration });
        }
        if trial.objective_score.is_none() && trial.retrieval_score.is_none() {
            return Err(HistoryError::Unscored(trial.iteration));
        }
        let kind = trial.kind();
        if self.has_score(trial.ordinal, kind) {
            return Err(HistoryError::Duplicate { ordinal: trial.ordinal, kind });
        }
        self.trials.push(trial);
        Ok(())
    }

    /// Appends the next trial, numbering it automatically.
    pub fn record(
        &mut self,
        ordinal: usize,
        config: RagConfig,
        kind: ScoreKind,
        score: S,
        cost: CostDelta,
    ) -> Result<&Trial<S>, HistoryError> {
        let (objective_score, retrieval_score) = match kind {
            ScoreKind::Objective => (Some(score), None),
            ScoreKind::Retrieval => (None, Some(score)),
        };
        self.push(Trial { iteration: self.trials.len() + 1, ordinal, config, objective_score, retrieval_score, cost })?;
        Ok(self.trials.last().expect("just pushed"))
    }

    pub fn trials(&self) -> &[Trial<S>] {
        &self.trials
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn visited(&self, ordinal: usize) -> bool {
        self.trials.iter().any(|t| t.ordinal == ordinal)
    }

    pub fn has_score(&self, ordinal: usize, kind: ScoreKind) -> bool {
        self.score_of(ordinal, kind).is_some()
    }

    pub fn score_of(&self, ordinal: usize, kind: ScoreKind) -> Option<S> {
        self.trials.iter().filter(|t| t.ordinal == ordinal).find_map(|t| match kind {
            ScoreKind::Objective => t.objective_score,
            ScoreKind::Retrieval => t.retrieval_score,
        })
    }

    /// Trials scored by the objective, in iteration order.
    pub fn objective_trials(&self) -> impl Iterator<Item = &Trial<S>> {
        self.trials.iter().filter(|t| t.kind() == ScoreKind::Objective)
    }

    pub fn truncate(&mut self, len: usize) {
        self.trials.truncate(len);
    }
}
