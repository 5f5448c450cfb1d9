//! Dev-set sampling with gold-document closure and noise documents.
//!
//! Algorithm (stable across platforms for a given seed):
//! 1. `rng = ChaCha8Rng::seed_from_u64(seed)`.
//! 2. Draw `ceil(qa_fraction * |dev|)` distinct dev indices with
//!    `rand::seq::index::sample`, then sort them (dev order is preserved).
//! 3. Gold union: the gold documents of the sampled questions, deduplicated.
//! 4. Noise pool: corpus documents outside the gold union, in corpus order.
//!    Draw `min(noise_ratio * |gold union|, |pool|)` of them the same way.
//! 5. The sampled corpus keeps the original corpus order.
//!
//! The test split is passed through unchanged and keeps answering against
//! the original corpus.

use std::collections::HashSet;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, Document};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplePlan {
    pub qa_fraction: f64,
    /// Noise documents drawn per gold document.
    pub noise_ratio: u32,
    pub seed: u64,
}

impl SamplePlan {
    pub fn validate(&self) -> Result<(), DataError> {
        if !(self.qa_fraction > 0.0 && self.qa_fraction <= 1.0) {
            return Err(DataError::InvalidPlan(format!("qa_fraction {} outside (0, 1]", self.qa_fraction)));
        }
        Ok(())
    }

    /// Number of questions drawn from a dev set of `dev_len` questions.
    pub fn sample_size(&self, dev_len: usize) -> usize {
        let exact = self.qa_fraction * dev_len as f64;
        // 0.1 * 1000 style products land within rounding of an integer
        let n = if (exact - exact.round()).abs() < 1e-9 { exact.round() } else { exact.ceil() };
        (n as usize).min(dev_len)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub sampled_questions: usize,
    pub gold_documents: usize,
    pub noise_requested: usize,
    pub noise_drawn: usize,
    /// Noise documents that could not be drawn because the pool ran out.
    pub shortfall: usize,
}

pub fn sample_dev(dataset: &Dataset, plan: &SamplePlan) -> Result<(Dataset, SampleReport), DataError> {
    plan.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);

    let n = plan.sample_size(dataset.dev.len());
    let mut picked = index::sample(&mut rng, dataset.dev.len(), n).into_vec();
    picked.sort_unstable();
    let dev: Vec<_> = picked.iter().map(|&i| dataset.dev[i].clone()).collect();

    let mut gold: HashSet<&str> = HashSet::new();
    for qa in &dev {
        for g in &qa.gold_doc_ids {
            gold.insert(g.as_str());
        }
    }
    let pool: Vec<usize> = dataset
        .corpus
        .iter()
        .enumerate()
        .filter(|(_, d)| !gold.contains(d.doc_id.as_str()))
        .map(|(i, _)| i)
        .collect();
    let requested = plan.noise_ratio as usize * gold.len();
    let take = requested.min(pool.len());
    let noise: HashSet<usize> = index::sample(&mut rng, pool.len(), take).into_iter().map(|i| pool[i]).collect();

    let corpus: Vec<Document> = dataset
        .corpus
        .iter()
        .enumerate()
        .filter(|(i, d)| gold.contains(d.doc_id.as_str()) || noise.contains(i))
        .map(|(_, d)| d.clone())
        .collect();

    let report = SampleReport {
        sampled_questions: dev.len(),
        gold_documents: gold.len(),
        noise_requested: requested,
        noise_drawn: take,
        shortfall: requested - take,
    };
    let test_corpus = Some(dataset.test_corpus.clone().unwrap_or_else(|| dataset.corpus.clone()));
    let sampled = Dataset { name: dataset.name.clone(), corpus, dev, test: dataset.test.clone(), test_corpus };
    Ok((sampled, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::QaPair;

    fn synthetic(dev_len: usize, corpus_len: usize, golds_per_q: usize) -> Dataset {
        let corpus = (0..corpus_len)
            .map(|i| Document { doc_id: format!("d{i}"), title: None, text: format!("doc {i}") })
            .collect();
        let dev = (0..dev_len)
            .map(|i| QaPair {
                qid: format!("q{i}"),
                question: format!("question {i}"),
                gold_answer: format!("answer {i}"),
                gold_doc_ids: (0..golds_per_q).map(|g| format!("d{}", i * golds_per_q + g)).collect(),
            })
            .collect();
        Dataset { name: "synthetic".into(), corpus, dev, test: vec![], test_corpus: None }
    }

    fn gold_closure_holds(ds: &Dataset) -> bool {
        let ids: HashSet<_> = ds.corpus.iter().map(|d| d.doc_id.as_str()).collect();
        ds.dev.iter().all(|q| q.gold_doc_ids.iter().all(|g| ids.contains(g.as_str())))
    }

    #[test]
    fn ten_percent_of_thousand_is_hundred() {
        let ds = synthetic(1000, 20_000, 1);
        let (s, report) = sample_dev(&ds, &SamplePlan { qa_fraction: 0.1, noise_ratio: 9, seed: 1 }).unwrap();
        assert_eq!(s.dev.len(), 100);
        assert_eq!(report.sampled_questions, 100);
        assert_eq!(s.corpus.len(), 1000);
        assert!(gold_closure_holds(&s));
    }

    #[test]
    fn identity_sample() {
        let ds = synthetic(10, 40, 1);
        let (s, report) = sample_dev(&ds, &SamplePlan { qa_fraction: 1.0, noise_ratio: 100, seed: 3 }).unwrap();
        assert_eq!(s.corpus, ds.corpus);
        assert_eq!(s.dev, ds.dev);
        assert_eq!(report.shortfall, 10 * 100 - 30);
    }

    #[test]
    fn recount_of_emitted_sample() {
        let ds = synthetic(10, 200, 1);
        let (s, _) = sample_dev(&ds, &SamplePlan { qa_fraction: 1.0, noise_ratio: 9, seed: 11 }).unwrap();
        assert_eq!(s.corpus.len(), 100);
        let gold: HashSet<_> = s.dev.iter().flat_map(|q| q.gold_doc_ids.iter().cloned()).collect();
        let ids: HashSet<_> = s.corpus.iter().map(|d| d.doc_id.clone()).collect();
        assert!(gold.is_subset(&ids));
        assert_eq!(ids.difference(&gold).count(), 90);
    }

    #[test]
    fn shared_gold_docs_counted_once() {
        let mut ds = synthetic(4, 100, 1);
        for qa in &mut ds.dev {
            qa.gold_doc_ids = vec!["d0".into(), "d1".into()];
        }
        let (s, report) = sample_dev(&ds, &SamplePlan { qa_fraction: 1.0, noise_ratio: 3, seed: 0 }).unwrap();
        assert_eq!(report.gold_documents, 2);
        assert_eq!(s.corpus.len(), 2 * 4);
    }

    #[test]
    fn deterministic_per_seed() {
        let ds = synthetic(200, 3000, 2);
        let plan = SamplePlan { qa_fraction: 0.25, noise_ratio: 4, seed: 42 };
        let a = sample_dev(&ds, &plan).unwrap().0;
        let b = sample_dev(&ds, &plan).unwrap().0;
        assert_eq!(a.content_hash(), b.content_hash());
        let c = sample_dev(&ds, &SamplePlan { seed: 43, ..plan }).unwrap().0;
        assert_ne!(a.content_hash(), c.content_hash());
    }

    #[test]
    fn rejects_bad_fraction() {
        let ds = synthetic(5, 10, 1);
        for f in [0.0, -0.5, 1.5, f64::NAN] {
            assert!(sample_dev(&ds, &SamplePlan { qa_fraction: f, noise_ratio: 1, seed: 0 }).is_err());
        }
    }

    #[test]
    fn sample_size_rounding() {
        let plan = |f| SamplePlan { qa_fraction: f, noise_ratio: 0, seed: 0 };
        assert_eq!(plan(0.1).sample_size(1000), 100);
        assert_eq!(plan(0.7).sample_size(10), 7);
        assert_eq!(plan(0.15).sample_size(10), 2);
        assert_eq!(plan(0.001).sample_size(10), 1);
    }
}
