//! Evaluation contract consumed by the optimizers, the objective definition,
//! and the grid-replay backend.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{Completeness, DataError, GridTable, Split};
use crate::metrics::{aggregate, Metric, MetricError, QuestionEval};
use crate::optimizers::{ScoreKind, Trial, TrialHistory};
use crate::scalar::{score_serde, Scalar};
use crate::searchspace::{RagConfig, SearchSpace, SpaceError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("config {ordinal} on {split}: {metric}: {source}")]
    Metric { ordinal: usize, split: Split, metric: Metric, source: MetricError },
    #[error("incomplete grid table: {0}")]
    Incomplete(String),
    #[error("objective weights must be non-negative and sum to 1")]
    InvalidObjective,
    #[error("context correctness is undefined on {0}: no question has gold documents")]
    NoGoldDocuments(Split),
    #[error("history is empty")]
    EmptyHistory,
    /// A remote service failed after all retries; the run can be resumed later.
    #[error("service unavailable: {0}")]
    Service(String),
    #[error("{0}")]
    Pipeline(String),
}

impl EvalError {
    pub fn is_suspendable(&self) -> bool {
        matches!(self, EvalError::Service(_))
    }
}

/// Token counts charged by one evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostDelta {
    pub embedded_tokens: u64,
    pub generation_input_tokens: u64,
    pub generation_output_tokens: u64,
}

impl CostDelta {
    pub fn generation_tokens(&self) -> u64 {
        self.generation_input_tokens + self.generation_output_tokens
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ObjectiveTerm<S: Scalar> {
    pub metric: Metric,
    #[serde(with = "score_serde")]
    pub weight: S,
}

/// Optimization objective: a weighted sum of per-metric means on the dev split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Objective<S: Scalar> {
    terms: Vec<ObjectiveTerm<S>>,
}

impl<S: Scalar> Objective<S> {
    pub fn single(metric: Metric) -> Self {
        Objective { terms: vec![ObjectiveTerm { metric, weight: S::one() }] }
    }

    /// Uniformly weighted combination of `metrics`.
    pub fn uniform(metrics: &[Metric]) -> Result<Self, EvalError> {
        if metrics.is_empty() {
            return Err(EvalError::InvalidObjective);
        }
        let w = S::ratio(1, metrics.len());
        Self::weighted(metrics.iter().map(|&m| (m, w)).collect())
    }

    pub fn weighted(terms: Vec<(Metric, S)>) -> Result<Self, EvalError> {
        if terms.is_empty() || terms.iter().any(|(_, w)| *w < S::zero()) {
            return Err(EvalError::InvalidObjective);
        }
        let sum = terms.iter().fold(S::zero(), |a, (_, w)| a + *w);
        if (sum.to_f64_lossy() - 1.0).abs() > 1e-9 {
            return Err(EvalError::InvalidObjective);
        }
        Ok(Objective { terms: terms.into_iter().map(|(metric, weight)| ObjectiveTerm { metric, weight }).collect() })
    }

    pub fn terms(&self) -> &[ObjectiveTerm<S>] {
        &self.terms
    }

    pub fn metrics(&self) -> Vec<Metric> {
        self.terms.iter().map(|t| t.metric).collect()
    }

    /// Aggregates per-question scores: per-metric means over defined questions, then the weighted sum.
    pub fn score(&self, per_question: &[QuestionEval<S>]) -> Result<S, (Metric, MetricError)> {
        let mut total = S::zero();
        for term in &self.terms {
            let scores: Vec<Option<S>> = per_question.iter().map(|q| q.scores.get(&term.metric).copied()).collect();
            let agg = aggregate(&scores).map_err(|e| (term.metric, e))?;
            total = total + term.weight * agg.mean;
        }
        Ok(total)
    }

    pub fn describe(&self) -> String {
        if let [only] = self.terms.as_slice() {
            return only.metric.to_string();
        }
        self.terms.iter().map(|t| format!("{}*{}", t.weight, t.metric)).collect::<Vec<_>>().join("+")
    }
}

/// How a configuration is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Full,
    /// Retrieval only, scored by context correctness; no generation is performed or charged.
    RetrievalOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult<S> {
    pub config: RagConfig,
    pub ordinal: usize,
    pub split: Split,
    pub mode: EvalMode,
    pub per_question: Vec<QuestionEval<S>>,
    pub objective_score: S,
    /// Questions whose evaluation failed (service errors); excluded from aggregation.
    pub failed: usize,
    pub cost: CostDelta,
}

/// Per-question scores for a set of metrics, before any objective is applied.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored<S> {
    pub config: RagConfig,
    pub ordinal: usize,
    pub split: Split,
    pub mode: EvalMode,
    pub per_question: Vec<QuestionEval<S>>,
    pub failed: usize,
    pub cost: CostDelta,
}

impl<S: Scalar> Scored<S> {
    fn into_result(self, objective: &Objective<S>) -> Result<EvalResult<S>, EvalError> {
        let objective_score = objective.score(&self.per_question).map_err(|(metric, source)| EvalError::Metric {
            ordinal: self.ordinal,
            split: self.split,
            metric,
            source,
        })?;
        Ok(EvalResult {
            config: self.config,
            ordinal: self.ordinal,
            split: self.split,
            mode: self.mode,
            per_question: self.per_question,
            objective_score,
            failed: self.failed,
            cost: self.cost,
        })
    }
}

/// A backend able to score configurations. Implementations are shared read-only across seeds.
pub trait Evaluator<S: Scalar>: Sync {
    fn space(&self) -> &SearchSpace;

    /// Scores every question of `split` on `metrics`. `RetrievalOnly` must not generate or charge generation.
    fn evaluate_metrics(
        &self,
        config: &RagConfig,
        split: Split,
        metrics: &[Metric],
        mode: EvalMode,
    ) -> Result<Scored<S>, EvalError>;

    fn evaluate(&self, config: &RagConfig, split: Split, objective: &Objective<S>) -> Result<EvalResult<S>, EvalError> {
        self.evaluate_metrics(config, split, &objective.metrics(), EvalMode::Full)?.into_result(objective)
    }

    /// Scores retrieval alone by context correctness.
    fn evaluate_retrieval_only(&self, config: &RagConfig, split: Split) -> Result<EvalResult<S>, EvalError> {
        self.evaluate_metrics(config, split, &[Metric::ContextMrr], EvalMode::RetrievalOnly)?
            .into_result(&Objective::single(Metric::ContextMrr))
    }

    /// Whether context correctness has at least one defined question on `split`.
    fn context_correctness_defined(&self, split: Split) -> bool;

    /// Checks that everything `objective` needs on `splits` is available before a run starts.
    fn preflight(&self, _objective: &Objective<S>, _splits: &[Split]) -> Result<(), EvalError> {
        Ok(())
    }
}

/// Best trial so far: highest objective score, earliest iteration on ties.
///
/// Trials scored only by retrieval count only while no trial has an objective score.
pub fn best_so_far<S: Scalar>(history: &TrialHistory<S>) -> Result<&Trial<S>, EvalError> {
    let best_of = |kind: ScoreKind| {
        history
            .trials()
            .iter()
            .filter(|t| t.kind() == kind)
            .fold(None::<&Trial<S>>, |best, t| match best {
                Some(b) if t.score() <= b.score() => Some(b),
                _ => Some(t),
            })
    };
    best_of(ScoreKind::Objective)
        .or_else(|| best_of(ScoreKind::Retrieval))
        .ok_or(EvalError::EmptyHistory)
}

/// Replays scores from a grid table. Evaluation is a pure lookup.
#[derive(Debug, Clone)]
pub struct GridReplay<S: Scalar> {
    space: SearchSpace,
    table: GridTable<S>,
    dev_qids: Vec<String>,
    test_qids: Vec<String>,
}

impl<S: Scalar> GridReplay<S> {
    /// Questions per split are taken from the table.
    pub fn new(space: SearchSpace, table: GridTable<S>) -> Result<Self, EvalError> {
        table.check_space(&space)?;
        let dev_qids = table.qids(Split::Dev);
        let test_qids = table.qids(Split::Test);
        Ok(GridReplay { space, table, dev_qids, test_qids })
    }

    /// Uses an explicit question list for `split` (e.g. from the dataset manifest).
    pub fn with_qids(mut self, split: Split, qids: Vec<String>) -> Self {
        match split {
            Split::Dev => self.dev_qids = qids,
            Split::Test => self.test_qids = qids,
        }
        self
    }

    pub fn table(&self) -> &GridTable<S> {
        &self.table
    }

    pub fn qids(&self, split: Split) -> &[String] {
        match split {
            Split::Dev => &self.dev_qids,
            Split::Test => &self.test_qids,
        }
    }

    pub fn completeness(&self, metric: Metric, split: Split) -> Completeness {
        self.table.completeness(&self.space, metric, split, Some(self.qids(split)))
    }

    /// Global maximum of the replayed objective over the whole space, lowest ordinal on ties.
    pub fn grid_max(&self, split: Split, objective: &Objective<S>) -> Result<(usize, S), EvalError> {
        let mut best: Option<(usize, S)> = None;
        for (ordinal, config) in self.space.enumerate().into_iter().enumerate() {
            let s = self.evaluate(&config, split, objective)?.objective_score;
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((ordinal, s));
            }
        }
        best.ok_or_else(|| EvalError::Incomplete("empty space".into()))
    }

    fn replay(&self, config: &RagConfig, split: Split, metrics: &[Metric], mode: EvalMode) -> Result<Scored<S>, EvalError> {
        let coords = self.space.coords_of_config(config)?;
        let ordinal = self.space.ordinal_of_coords(&coords);
        let mut per_question = Vec::with_capacity(self.qids(split).len());
        let mut missing = Vec::new();
        let mut cost = CostDelta {
            embedded_tokens: self.table.costs.index_tokens.get(&self.space.index_ordinal(&coords)).copied().unwrap_or(0),
            ..CostDelta::default()
        };
        for qid in self.qids(split) {
            let mut scores = BTreeMap::new();
            for &metric in metrics {
                match self.table.get(ordinal, split, metric, qid) {
                    Some(s) => {
                        scores.insert(metric, s);
                    }
                    // questions without gold documents carry no context_mrr row
                    None if metric == Metric::ContextMrr => {}
                    None => missing.push(format!("{metric}/{qid}")),
                }
            }
            if mode == EvalMode::Full {
                if let Some((i, o)) = self.table.costs.generation.get(&(ordinal, split, qid.clone())) {
                    cost.generation_input_tokens += i;
                    cost.generation_output_tokens += o;
                }
            }
            per_question.push(QuestionEval {
                qid: qid.clone(),
                generated_answer: String::new(),
                retrieved: vec![],
                scores,
                generation_tokens: None,
            });
        }
        if !missing.is_empty() {
            let shown: Vec<_> = missing.iter().take(5).cloned().collect();
            return Err(EvalError::Incomplete(format!(
                "config {ordinal} on {split} lacks {} rows ({}{})",
                missing.len(),
                shown.join(", "),
                if missing.len() > 5 { ", ..." } else { "" }
            )));
        }
        if self.qids(split).is_empty() {
            return Err(EvalError::Incomplete(format!("no {split} questions in the grid table")));
        }
        Ok(Scored { config: config.clone(), ordinal, split, mode, per_question, failed: 0, cost })
    }
}

impl<S: Scalar> Evaluator<S> for GridReplay<S> {
    fn space(&self) -> &SearchSpace {
        &self.space
    }

    fn evaluate_metrics(
        &self,
        config: &RagConfig,
        split: Split,
        metrics: &[Metric],
        mode: EvalMode,
    ) -> Result<Scored<S>, EvalError> {
        self.replay(config, split, metrics, mode)
    }

    fn context_correctness_defined(&self, split: Split) -> bool {
        self.table.has_metric(Metric::ContextMrr, split)
    }

    fn preflight(&self, objective: &Objective<S>, splits: &[Split]) -> Result<(), EvalError> {
        for &split in splits {
            for metric in objective.metrics() {
                if metric == Metric::ContextMrr {
                    if !self.context_correctness_defined(split) {
                        return Err(EvalError::NoGoldDocuments(split));
                    }
                    continue;
                }
                let c = self.completeness(metric, split);
                if !c.is_complete() {
                    return Err(EvalError::Incomplete(c.describe(5)));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::GridKey;
    use crate::Exact;

    fn space() -> SearchSpace {
        SearchSpace::builtin()
    }

    fn replay_of(table: GridTable<f64>) -> GridReplay<f64> {
        GridReplay::new(space(), table).unwrap()
    }

    fn trial(iteration: usize, ordinal: usize, score: f64) -> Trial<f64> {
        Trial {
            iteration,
            ordinal,
            config: space().config_at(ordinal).unwrap(),
            objective_score: Some(score),
            retrieval_score: None,
            cost: CostDelta::default(),
        }
    }

    #[test]
    fn four_rows_average_to_half() {
        let rows = [1.0, 0.5, 0.0, 0.5];
        let t = GridTable::from_fn(&space(), Split::Dev, Metric::LexicalAc, 4, |_, q| rows[q]).unwrap();
        let r = replay_of(t);
        let cfg = space().config_at(17).unwrap();
        let res = r.evaluate(&cfg, Split::Dev, &Objective::single(Metric::LexicalAc)).unwrap();
        assert_eq!(res.objective_score, 0.5);
        assert_eq!(res.per_question.len(), 4);
        assert_eq!(res.ordinal, 17);
    }

    #[test]
    fn exact_rational_replay() {
        let third = Exact::new(1, 3);
        let t = GridTable::<Exact>::from_fn(&space(), Split::Dev, Metric::LexicalAc, 3, |_, q| {
            [third, third, Exact::new(1, 1)][q]
        })
        .unwrap();
        let r = GridReplay::new(space(), t).unwrap();
        let res = r.evaluate(&space().config_at(0).unwrap(), Split::Dev, &Objective::single(Metric::LexicalAc)).unwrap();
        assert_eq!(res.objective_score, Exact::new(5, 9));
    }

    #[test]
    fn single_question_split() {
        let t = GridTable::from_fn(&space(), Split::Test, Metric::JudgeAc, 1, |o, _| o as f64 / 200.0).unwrap();
        let r = replay_of(t);
        let res = r.evaluate(&space().config_at(40).unwrap(), Split::Test, &Objective::single(Metric::JudgeAc)).unwrap();
        assert_eq!(res.objective_score, 0.2);
    }

    #[test]
    fn retrieval_only_means_and_charges_nothing_for_generation() {
        let mrr = [1.0, 0.5, 0.0];
        let mut t = GridTable::from_fn(&space(), Split::Dev, Metric::ContextMrr, 3, |_, q| mrr[q]).unwrap();
        t.costs.generation.insert((5, Split::Dev, "q1".into()), (900, 40));
        t.costs.index_tokens.insert(space().index_ordinal(&space().coords_of_ordinal(5).unwrap()), 12_000);
        let r = replay_of(t);
        let cfg = space().config_at(5).unwrap();
        let res = r.evaluate_retrieval_only(&cfg, Split::Dev).unwrap();
        assert_eq!(res.objective_score, 0.5);
        assert_eq!(res.cost.generation_input_tokens, 0);
        assert_eq!(res.cost.generation_output_tokens, 0);
        assert_eq!(res.cost.embedded_tokens, 12_000);
        let full = r.evaluate(&cfg, Split::Dev, &Objective::single(Metric::ContextMrr)).unwrap();
        assert_eq!(full.cost.generation_tokens(), 940);
    }

    #[test]
    fn perfect_retrieval_scores_one() {
        let t = GridTable::from_fn(&space(), Split::Dev, Metric::ContextMrr, 2, |_, _| 1.0).unwrap();
        let r = replay_of(t);
        assert_eq!(r.evaluate_retrieval_only(&space().config_at(3).unwrap(), Split::Dev).unwrap().objective_score, 1.0);
    }

    #[test]
    fn missing_rows_are_named() {
        let mut t = GridTable::<f64>::new(&space());
        for q in ["q1", "q2"] {
            t.insert(GridKey { ordinal: 0, split: Split::Dev, metric: Metric::LexicalAc, qid: q.into() }, 0.3).unwrap();
        }
        t.insert(GridKey { ordinal: 1, split: Split::Dev, metric: Metric::LexicalAc, qid: "q1".into() }, 0.3).unwrap();
        let r = replay_of(t);
        let err = r.evaluate(&space().config_at(1).unwrap(), Split::Dev, &Objective::single(Metric::LexicalAc)).unwrap_err();
        assert!(matches!(&err, EvalError::Incomplete(m) if m.contains("lexical_ac/q2")), "{err}");
        let err = r.preflight(&Objective::single(Metric::LexicalAc), &[Split::Dev]).unwrap_err();
        assert!(matches!(err, EvalError::Incomplete(_)));
    }

    #[test]
    fn context_mrr_gaps_are_undefined_questions() {
        let mut t = GridTable::<f64>::new(&space());
        for o in 0..162 {
            t.insert(GridKey { ordinal: o, split: Split::Dev, metric: Metric::ContextMrr, qid: "q1".into() }, 0.25).unwrap();
            t.insert(GridKey { ordinal: o, split: Split::Dev, metric: Metric::LexicalAc, qid: "q2".into() }, 1.0).unwrap();
            t.insert(GridKey { ordinal: o, split: Split::Dev, metric: Metric::LexicalAc, qid: "q1".into() }, 0.0).unwrap();
        }
        let r = replay_of(t);
        let res = r.evaluate_retrieval_only(&space().config_at(9).unwrap(), Split::Dev).unwrap();
        assert_eq!(res.objective_score, 0.25);
        assert!(r.context_correctness_defined(Split::Dev));
        assert!(!r.context_correctness_defined(Split::Test));
    }

    #[test]
    fn replay_is_pure() {
        let t = GridTable::from_fn(&space(), Split::Dev, Metric::Faithfulness, 5, |o, q| ((o + q) % 7) as f64 / 7.0).unwrap();
        let r = replay_of(t);
        let obj = Objective::single(Metric::Faithfulness);
        for o in [0, 80, 161] {
            let cfg = space().config_at(o).unwrap();
            assert_eq!(r.evaluate(&cfg, Split::Dev, &obj).unwrap(), r.evaluate(&cfg, Split::Dev, &obj).unwrap());
        }
    }

    #[test]
    fn grid_max_matches_scan() {
        let t = GridTable::from_fn(&space(), Split::Dev, Metric::LexicalAc, 3, |o, q| ((o * 31 + q * 7) % 97) as f64 / 96.0)
            .unwrap();
        let r = replay_of(t.clone());
        let obj = Objective::single(Metric::LexicalAc);
        let (ordinal, best) = r.grid_max(Split::Dev, &obj).unwrap();
        let mut oracle = (0, f64::MIN);
        for o in 0..162 {
            let m = (0..3).map(|q| t.get(o, Split::Dev, Metric::LexicalAc, &format!("q{}", q + 1)).unwrap()).sum::<f64>() / 3.0;
            if m > oracle.1 {
                oracle = (o, m);
            }
        }
        assert_eq!((ordinal, best), oracle);
    }

    #[test]
    fn weighted_objective() {
        let mut t = GridTable::from_fn(&space(), Split::Dev, Metric::LexicalAc, 2, |_, _| 1.0).unwrap();
        t.fill(&space(), Split::Dev, Metric::Faithfulness, 2, |_, _| 0.0).unwrap();
        let r = replay_of(t);
        let cfg = space().config_at(2).unwrap();
        let uniform = Objective::uniform(&[Metric::LexicalAc, Metric::Faithfulness]).unwrap();
        assert_eq!(r.evaluate(&cfg, Split::Dev, &uniform).unwrap().objective_score, 0.5);
        let weighted = Objective::weighted(vec![(Metric::LexicalAc, 0.75), (Metric::Faithfulness, 0.25)]).unwrap();
        assert_eq!(r.evaluate(&cfg, Split::Dev, &weighted).unwrap().objective_score, 0.75);
        assert!(Objective::weighted(vec![(Metric::LexicalAc, 0.7), (Metric::Faithfulness, 0.7)]).is_err());
        assert!(Objective::weighted(vec![(Metric::LexicalAc, 1.5), (Metric::Faithfulness, -0.5)]).is_err());
    }

    #[test]
    fn best_so_far_examples() {
        let h = TrialHistory::from_trials(vec![trial(1, 10, 0.3), trial(2, 20, 0.7), trial(3, 30, 0.5)]).unwrap();
        let b = best_so_far(&h).unwrap();
        assert_eq!((b.iteration, b.score()), (2, 0.7));
        let h = TrialHistory::from_trials(vec![trial(1, 10, 0.7), trial(2, 20, 0.7)]).unwrap();
        assert_eq!(best_so_far(&h).unwrap().iteration, 1);
        assert!(matches!(best_so_far(&TrialHistory::<f64>::new()), Err(EvalError::EmptyHistory)));
    }

    #[test]
    fn objective_trials_outrank_retrieval_trials() {
        let mut h = TrialHistory::<f64>::new();
        h.record(1, space().config_at(1).unwrap(), ScoreKind::Retrieval, 0.9, CostDelta::default()).unwrap();
        assert_eq!(best_so_far(&h).unwrap().ordinal, 1);
        h.record(2, space().config_at(2).unwrap(), ScoreKind::Objective, 0.1, CostDelta::default()).unwrap();
        assert_eq!(best_so_far(&h).unwrap().ordinal, 2);
    }

    #[test]
    fn best_so_far_matches_linear_scan_and_is_monotone() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(10);
        for _ in 0..50 {
            let mut h = TrialHistory::new();
            let mut prev = f64::MIN;
            for i in 1..=10 {
                h.push(trial(i, i * 3, (rng.gen_range(0..5) as f64) / 4.0)).unwrap();
                let got = best_so_far(&h).unwrap();
                let scan = h.trials().iter().map(|t| t.score()).fold(f64::MIN, f64::max);
                let first = h.trials().iter().find(|t| t.score() == scan).unwrap();
                assert_eq!(got.iteration, first.iteration);
                assert!(got.score() >= prev);
                prev = got.score();
            }
        }
    }
}
