use std::sync::atomic::{AtomicUsize, Ordering};

use super::*;
use crate::evaluator::{GridReplay, Scored};
use crate::searchspace::RagConfig;

const QUESTIONS: usize = 3;

fn space() -> SearchSpace {
    SearchSpace::builtin()
}

fn score(ordinal: usize, q: usize, salt: usize) -> f64 {
    ((ordinal * 37 + q * 11 + salt * 5) % 101) as f64 / 100.0
}

/// Complete dev and test lexical_ac, dev context_mrr, and token costs for every config.
fn fixture() -> GridTable<f64> {
    let s = space();
    let mut t = GridTable::from_fn(&s, Split::Dev, Metric::LexicalAc, QUESTIONS, |o, q| score(o, q, 0)).unwrap();
    t.fill(&s, Split::Test, Metric::LexicalAc, QUESTIONS, |o, q| score(o, q, 1)).unwrap();
    t.fill(&s, Split::Dev, Metric::ContextMrr, QUESTIONS, |o, q| score(o / 9, q, 2)).unwrap();
    for i in 0..s.index_count() {
        t.costs.index_tokens.insert(i, 1000 + i as u64);
    }
    for o in 0..s.total_size() {
        for split in [Split::Dev, Split::Test] {
            for q in 1..=QUESTIONS {
                t.costs.generation.insert((o, split, format!("q{q}")), (100, 10));
            }
        }
    }
    t
}

fn replay() -> GridReplay<f64> {
    GridReplay::new(space(), fixture()).unwrap()
}

fn spec(algorithm: Algorithm, budget: usize, seeds: usize) -> RunSpec<f64> {
    RunSpec::new(algorithm, Objective::single(Metric::LexicalAc), budget, (0..seeds as u64).collect())
}

fn complete(spec: &RunSpec<f64>, e: &impl Evaluator<f64>) -> RunRecord<f64> {
    run(spec, e).unwrap().complete().expect("run completes")
}

#[test]
fn ten_by_ten_shape() {
    let r = complete(&spec(Algorithm::GreedyM, 10, 10), &replay());
    assert_eq!(r.seeds.len(), 10);
    assert!(r.seeds.iter().all(|s| s.history.len() == 10 && s.iterations.len() == 10));
    assert_eq!(r.aggregates.len(), 10);
    assert_eq!(r.iterations(), 10);
}

#[test]
fn single_iteration_best_is_that_trial() {
    let r = complete(&spec(Algorithm::Random, 1, 1), &replay());
    let s = &r.seeds[0];
    let it = &s.iterations[0];
    assert_eq!(it.best_ordinal, it.ordinal);
    assert_eq!(it.best_dev, Some(s.history.trials()[0].score()));
    assert_eq!(r.aggregates[0].se_test, 0.0);
}

#[test]
fn exhaustive_random_run_reaches_grid_max() {
    let e = replay();
    let r = complete(&spec(Algorithm::Random, 162, 3), &e);
    let (ordinal, max) = e.grid_max(Split::Dev, &Objective::single(Metric::LexicalAc)).unwrap();
    for s in &r.seeds {
        let last = s.final_iteration().unwrap();
        assert_eq!(last.best_dev, Some(max));
        assert_eq!(last.best_ordinal, ordinal);
    }
}

#[test]
fn best_dev_monotone_and_test_tracks_dev_best() {
    let e = replay();
    for algorithm in Algorithm::ALL {
        let r = complete(&spec(algorithm, 25, 4), &e);
        for s in &r.seeds {
            let mut prev: Option<f64> = None;
            for (i, it) in s.iterations.iter().enumerate() {
                if let (Some(p), Some(b)) = (prev, it.best_dev) {
                    assert!(b >= p);
                }
                assert!(prev.is_none() || it.best_dev.is_some());
                prev = it.best_dev;
                let partial = TrialHistory::from_trials(s.history.trials()[..=i].to_vec()).unwrap();
                let best = best_so_far(&partial).unwrap();
                assert_eq!(it.best_ordinal, best.ordinal);
                let test = e.evaluate(&best.config, Split::Test, &Objective::single(Metric::LexicalAc)).unwrap();
                assert_eq!(it.test_of_best, test.objective_score);
            }
        }
    }
}

#[test]
fn aggregates_recompute_from_seed_rows() {
    let r = complete(&spec(Algorithm::Tpe, 12, 5), &replay());
    for (i, a) in r.aggregates.iter().enumerate() {
        let vals: Vec<f64> = r.seeds.iter().map(|s| s.iterations[i].test_of_best).collect();
        let mean = vals.iter().sum::<f64>() / 5.0;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
        assert!((a.mean_test - mean).abs() < 1e-12);
        assert!((a.se_test - sd / 5f64.sqrt()).abs() < 1e-12);
    }
}

#[test]
fn ledger_charges_shared_index_once() {
    let s = space();
    let mut ledger = CostLedger::new();
    let base = s.config_at(0).unwrap();
    let cost = CostDelta { embedded_tokens: 5000, generation_input_tokens: 300, generation_output_tokens: 20 };
    let mut snaps = Vec::new();
    for top_k in 0..3 {
        let coords = s.coords_of_config(&base).unwrap().with(crate::searchspace::ParamName::TopK, top_k);
        let cfg = s.config_of_coords(&coords);
        assert_eq!(ledger.charge(&cfg.index, &cost), top_k == 0);
        snaps.push(ledger.snapshot());
    }
    let t = ledger.totals();
    assert_eq!(t.embedded_tokens, 5000);
    assert_eq!(t.generation_input_tokens, 900);
    assert_eq!(t.generation_output_tokens, 60);
    assert_eq!(t.indexes_charged, 1);
    assert!(snaps.windows(2).all(|w| w[1].dominates(&w[0])));
}

#[test]
fn greedy_m_first_sweep_builds_one_index() {
    let r = complete(&spec(Algorithm::GreedyM, 3, 6), &replay());
    for s in &r.seeds {
        assert_eq!(s.iterations[2].ledger.indexes_charged, 1);
        assert_eq!(s.iterations[2].ledger.generation_input_tokens, 3 * 3 * 100);
    }
}

#[test]
fn rcc_spends_no_generation_during_retrieval_sweeps() {
    let r = complete(&spec(Algorithm::GreedyRcc, 12, 8), &replay());
    for s in &r.seeds {
        for it in &s.iterations[..8] {
            assert_eq!(it.mode, EvalMode::RetrievalOnly);
            assert_eq!(it.ledger.generation_tokens(), 0);
            assert_eq!(it.best_dev, None);
        }
        assert!(s.iterations[8].ledger.generation_tokens() > 0);
        assert!(s.iterations[8].best_dev.is_some());
        assert!(s.iterations.windows(2).all(|w| w[1].ledger.dominates(&w[0].ledger)));
    }
}

#[test]
fn test_evaluations_cached_per_config() {
    let r = complete(&spec(Algorithm::Random, 30, 2), &replay());
    for s in &r.seeds {
        let distinct: BTreeSet<_> = s.iterations.iter().map(|i| i.best_ordinal).collect();
        let last = s.iterations.last().unwrap().test_ledger;
        assert_eq!(last.generation_input_tokens, distinct.len() as u64 * 3 * 100);
    }
}

#[test]
fn rcc_refuses_without_gold_documents() {
    let s = space();
    let mut t = GridTable::from_fn(&s, Split::Dev, Metric::LexicalAc, 2, |o, _| score(o, 0, 0)).unwrap();
    t.fill(&s, Split::Test, Metric::LexicalAc, 2, |o, _| score(o, 0, 1)).unwrap();
    let e = GridReplay::new(s, t).unwrap();
    let err = run(&spec(Algorithm::GreedyRcc, 5, 1), &e).unwrap_err();
    assert!(err.to_string().contains("gold documents"), "{err}");
    assert!(run(&spec(Algorithm::GreedyR, 5, 1), &e).is_ok());
}

#[test]
fn incomplete_table_rejected_before_running() {
    let s = space();
    let t = GridTable::from_fn(&s, Split::Dev, Metric::LexicalAc, 2, |o, _| score(o, 0, 0)).unwrap();
    let e = GridReplay::new(s, t).unwrap();
    assert!(matches!(run(&spec(Algorithm::Random, 5, 1), &e), Err(HarnessError::Eval(EvalError::Incomplete(_)))));
}

#[test]
fn spec_validation() {
    let s = space();
    assert!(spec(Algorithm::Random, 0, 1).validate(&s).is_err());
    assert!(spec(Algorithm::Random, 163, 1).validate(&s).is_err());
    assert!(spec(Algorithm::Random, 10, 0).validate(&s).is_err());
    let mut dup = spec(Algorithm::Random, 10, 2);
    dup.seeds = vec![4, 4];
    assert!(dup.validate(&s).is_err());
    assert!(spec(Algorithm::Random, 162, 10).validate(&s).is_ok());
}

#[test]
fn identical_across_thread_counts() {
    let e = replay();
    let mut one = spec(Algorithm::Tpe, 15, 6);
    one.parallelism = 1;
    let mut four = one.clone();
    four.parallelism = 4;
    let a = complete(&one, &e);
    let b = complete(&four, &e);
    assert_eq!(a.seeds, b.seeds);
    assert_eq!(a.aggregates, b.aggregates);
}

#[test]
fn export_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.jsonl");
    let r = complete(&spec(Algorithm::GreedyRcc, 10, 10), &replay());
    export_run(&r, &path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let rows: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let count = |kind: &str| rows.iter().filter(|r| r["record"] == kind).count();
    assert_eq!((count("header"), count("trial"), count("aggregate")), (1, 100, 10));
    let back: RunRecord<f64> = load_run(&path).unwrap();
    assert_eq!(back, r);
}

#[test]
fn export_round_trip_exact() {
    let s = space();
    let third = crate::Exact::new(1, 3);
    let mut t = GridTable::<crate::Exact>::from_fn(&s, Split::Dev, Metric::LexicalAc, 3, |o, q| {
        if (o + q) % 2 == 0 { third } else { crate::Exact::new(o as i128 % 7, 7) }
    })
    .unwrap();
    t.fill(&s, Split::Test, Metric::LexicalAc, 3, |o, _| crate::Exact::new(o as i128, 161)).unwrap();
    let e = GridReplay::new(s, t).unwrap();
    let sp = RunSpec::new(Algorithm::Random, Objective::single(Metric::LexicalAc), 8, vec![1, 2, 3]);
    let r = run(&sp, &e).unwrap().complete().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exact.jsonl");
    export_run(&r, &path).unwrap();
    assert_eq!(load_run::<crate::Exact>(&path).unwrap(), r);
}

#[test]
fn export_rejects_empty_seed_list() {
    let mut r = complete(&spec(Algorithm::Random, 2, 1), &replay());
    r.seeds.clear();
    let dir = tempfile::tempdir().unwrap();
    assert!(export_run(&r, &dir.path().join("x.jsonl")).is_err());
}

/// Fails with a service error on chosen call numbers.
struct Flaky {
    inner: GridReplay<f64>,
    calls: AtomicUsize,
    fail_on: Vec<usize>,
}

impl Evaluator<f64> for Flaky {
    fn space(&self) -> &SearchSpace {
        self.inner.space()
    }

    fn evaluate_metrics(&self, config: &RagConfig, split: Split, metrics: &[Metric], mode: EvalMode) -> Result<Scored<f64>, EvalError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst) + 1;
        if self.fail_on.contains(&n) {
            return Err(EvalError::Service(format!("outage on call {n}")));
        }
        self.inner.evaluate_metrics(config, split, metrics, mode)
    }

    fn context_correctness_defined(&self, split: Split) -> bool {
        self.inner.context_correctness_defined(split)
    }
}

#[test]
fn suspended_run_resumes_to_identical_record() {
    for algorithm in Algorithm::ALL {
        let mut sp = spec(algorithm, 20, 1);
        sp.parallelism = 1;
        let reference = complete(&sp, &replay());
        let flaky = Flaky { inner: replay(), calls: AtomicUsize::new(0), fail_on: vec![7, 19, 20] };
        let mut outcome = run(&sp, &flaky).unwrap();
        let mut suspensions = 0;
        let dir = tempfile::tempdir().unwrap();
        let record = loop {
            match outcome {
                RunOutcome::Complete(r) => break r,
                RunOutcome::Suspended(cp) => {
                    suspensions += 1;
                    assert!(cp.reason.contains("outage"));
                    let path = dir.path().join("cp.json");
                    cp.store(&path).unwrap();
                    outcome = resume(Checkpoint::load(&path).unwrap(), &flaky).unwrap();
                }
            }
        };
        assert!(suspensions >= 2, "{algorithm}");
        assert_eq!(record.seeds, reference.seeds, "{algorithm}");
    }
}

#[test]
fn fill_resumes_over_missing_configs() {
    let s = space();
    let full = fixture();
    let e = GridReplay::new(s.clone(), full.clone()).unwrap();
    let mut partial = GridTable::new(&s);
    for (k, v) in full.iter() {
        if ![4, 50, 161].contains(&k.ordinal) {
            partial.insert(k.clone(), *v).unwrap();
        }
    }
    let plan = |split| FillPlan {
        split,
        qids: (1..=QUESTIONS).map(|q| format!("q{q}")).collect(),
        gold_qids: (1..=QUESTIONS).map(|q| format!("q{q}")).collect(),
    };
    let mut saves = 0;
    let report = fill_grid(&e, &mut partial, &[plan(Split::Dev)], &[Metric::LexicalAc, Metric::ContextMrr], |_| {
        saves += 1;
        Ok(())
    })
    .unwrap();
    assert_eq!(report.evaluated, vec![(Split::Dev, 4), (Split::Dev, 50), (Split::Dev, 161)]);
    assert_eq!(saves, 3);
    assert!(report.is_complete());
    let again = fill_grid(&e, &mut partial, &[plan(Split::Dev)], &[Metric::LexicalAc, Metric::ContextMrr], |_| Ok(())).unwrap();
    assert!(again.evaluated.is_empty());
    assert_eq!(again.already_complete, 162);
}

#[test]
fn fill_suspends_on_outage() {
    let s = space();
    let full = fixture();
    let flaky = Flaky { inner: GridReplay::new(s.clone(), full).unwrap(), calls: AtomicUsize::new(0), fail_on: vec![3] };
    let mut table = GridTable::new(&s);
    let plan = FillPlan { split: Split::Test, qids: vec!["q1".into()], gold_qids: BTreeSet::new() };
    let report = fill_grid(&flaky, &mut table, std::slice::from_ref(&plan), &[Metric::LexicalAc], |_| Ok(())).unwrap();
    assert_eq!(report.evaluated.len(), 2);
    assert!(report.suspended.is_some());
    let report = fill_grid(&flaky, &mut table, &[plan], &[Metric::LexicalAc], |_| Ok(())).unwrap();
    assert_eq!(report.evaluated.len(), 160);
    assert!(report.is_complete());
}
