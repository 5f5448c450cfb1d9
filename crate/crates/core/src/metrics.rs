//! Lexical per-question metrics and their benchmark-level aggregation.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

/// Bumped whenever tokenization changes; every lexical score depends on it.
pub const TOKENIZER_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("no question has a defined score")]
    AllUndefined,
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
}

/// Metric names shared with grid tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "lexical_ac")]
    LexicalAc,
    #[serde(rename = "faithfulness")]
    Faithfulness,
    #[serde(rename = "context_mrr")]
    ContextMrr,
    #[serde(rename = "judge_ac")]
    JudgeAc,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::LexicalAc, Metric::Faithfulness, Metric::ContextMrr, Metric::JudgeAc];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::LexicalAc => "lexical_ac",
            Metric::Faithfulness => "faithfulness",
            Metric::ContextMrr => "context_mrr",
            Metric::JudgeAc => "judge_ac",
        }
    }

    /// Whether computing the metric requires a generated answer.
    pub fn needs_generation(self) -> bool {
        !matches!(self, Metric::ContextMrr)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = MetricError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| MetricError::UnknownMetric(s.to_string()))
    }
}

/// A retrieved chunk as seen by the metrics: its source document, 1-based rank and text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedChunk {
    pub source_doc_id: String,
    pub rank: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuestionEval<S> {
    pub qid: String,
    pub generated_answer: String,
    pub retrieved: Vec<RetrievedChunk>,
    pub scores: BTreeMap<Metric, S>,
    /// Generation (input, output) tokens spent on this question, when generated.
    pub generation_tokens: Option<(u64, u64)>,
}

static PUNCTUATION: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\p{P}").expect("valid regex"));

/// Lowercases, replaces Unicode punctuation with spaces and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let lowered = text.to_lowercase();
    PUNCTUATION
        .replace_all(&lowered, " ")
        .split_whitespace()
        .map(str::to_owned)
        .collect()
}

fn bag(tokens: &[String]) -> HashMap<&str, usize> {
    let mut counts = HashMap::new();
    for t in tokens {
        *counts.entry(t.as_str()).or_insert(0) += 1;
    }
    counts
}

/// Size of the multiset intersection of two token bags.
fn bag_overlap(a: &[String], b: &[String]) -> usize {
    let b_counts = bag(b);
    bag(a)
        .into_iter()
        .map(|(tok, n)| n.min(b_counts.get(tok).copied().unwrap_or(0)))
        .sum()
}

/// Reciprocal rank of the first chunk drawn from a gold document.
///
/// `None` when the question has no gold documents: the metric is undefined
/// for it and it is excluded from the average.
pub fn context_correctness_mrr<S: Scalar>(retrieved: &[RetrievedChunk], gold_doc_ids: &[String]) -> Option<S> {
    if gold_doc_ids.is_empty() {
        return None;
    }
    let first = retrieved
        .iter()
        .filter(|c| gold_doc_ids.iter().any(|g| *g == c.source_doc_id))
        .map(|c| c.rank)
        .min();
    Some(match first {
        Some(rank) => S::ratio(1, rank),
        None => S::zero(),
    })
}

/// Token precision of the answer against the concatenated retrieved contexts.
pub fn faithfulness_precision<S: Scalar>(generated_answer: &str, retrieved: &[RetrievedChunk]) -> S {
    let answer = tokenize(generated_answer);
    if answer.is_empty() {
        return S::zero();
    }
    let contexts: Vec<String> = retrieved.iter().flat_map(|c| tokenize(&c.text)).collect();
    S::ratio(bag_overlap(&answer, &contexts), answer.len())
}

/// Token recall of the gold answer within the generated answer; `None` for an empty gold answer.
pub fn lexical_answer_correctness<S: Scalar>(generated_answer: &str, gold_answer: &str) -> Option<S> {
    let gold = tokenize(gold_answer);
    if gold.is_empty() {
        return None;
    }
    let generated = tokenize(generated_answer);
    Some(S::ratio(bag_overlap(&gold, &generated), gold.len()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate<S> {
    pub mean: S,
    pub defined: usize,
    pub excluded: usize,
}

/// Mean over defined per-question scores.
pub fn aggregate<S: Scalar>(scores: &[Option<S>]) -> Result<Aggregate<S>, MetricError> {
    let defined: Vec<S> = scores.iter().flatten().copied().collect();
    let mean = S::mean(&defined).ok_or(MetricError::AllUndefined)?;
    Ok(Aggregate { mean, defined: defined.len(), excluded: scores.len() - defined.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;

    type Exact = Ratio<i128>;

    fn chunks(ids: &[&str]) -> Vec<RetrievedChunk> {
        ids.iter()
            .enumerate()
            .map(|(i, id)| RetrievedChunk { source_doc_id: id.to_string(), rank: i + 1, text: format!("text {i}") })
            .collect()
    }

    fn ctx(texts: &[&str]) -> Vec<RetrievedChunk> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| RetrievedChunk { source_doc_id: format!("d{i}"), rank: i + 1, text: t.to_string() })
            .collect()
    }

    #[test]
    fn tokenizer_rules() {
        assert_eq!(tokenize("Abraham Lincoln."), vec!["abraham", "lincoln"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("IBM's Granite-3.1"), vec!["ibm", "s", "granite", "3", "1"]);
        assert_eq!(tokenize("«Ça va?» — oui"), vec!["ça", "va", "oui"]);
    }

    #[test]
    fn mrr_cases() {
        let gold = vec!["g".to_string()];
        assert_eq!(context_correctness_mrr::<Exact>(&chunks(&["g", "x"]), &gold), Some(Exact::from(1)));
        assert_eq!(context_correctness_mrr::<Exact>(&chunks(&["x", "y"]), &gold), Some(Exact::from(0)));
        assert_eq!(context_correctness_mrr::<Exact>(&chunks(&["x", "y", "g", "g"]), &gold), Some(Exact::new(1, 3)));
        assert_eq!(context_correctness_mrr::<f64>(&chunks(&["g"]), &[]), None);
    }

    #[test]
    fn faithfulness_cases() {
        let contexts = ctx(&["The printing press was invented by Gutenberg"]);
        assert_eq!(faithfulness_precision::<Exact>("printing press invented by Gutenberg", &contexts), Exact::from(1));
        assert_eq!(faithfulness_precision::<Exact>("zebra quokka", &contexts), Exact::from(0));
        assert_eq!(faithfulness_precision::<Exact>("a b c c", &ctx(&["a c"])), Exact::new(1, 2));
        assert_eq!(faithfulness_precision::<Exact>("a b c c", &ctx(&["a c", "c d"])), Exact::new(3, 4));
        assert_eq!(faithfulness_precision::<Exact>("...", &contexts), Exact::from(0));
    }

    #[test]
    fn lexical_ac_cases() {
        assert_eq!(lexical_answer_correctness::<Exact>("the printing press", "the printing press"), Some(Exact::from(1)));
        assert_eq!(lexical_answer_correctness::<Exact>("foo", "bar"), Some(Exact::from(0)));
        assert_eq!(
            lexical_answer_correctness::<Exact>("gutenberg invented the press", "the printing press"),
            Some(Exact::new(2, 3))
        );
        assert_eq!(lexical_answer_correctness::<Exact>("anything", "  ,"), None);
    }

    #[test]
    fn aggregate_cases() {
        let a = aggregate(&[Some(1.0), Some(0.0)]).unwrap();
        assert_eq!(a.mean, 0.5);
        assert_eq!(aggregate(&[Some(0.3)]).unwrap().mean, 0.3);
        let e = aggregate(&[Some(Exact::new(1, 3)), Some(Exact::from(1)), Some(Exact::from(0)), None]).unwrap();
        assert_eq!(e, Aggregate { mean: Exact::new(4, 9), defined: 3, excluded: 1 });
        assert_eq!(aggregate::<f64>(&[None, None]), Err(MetricError::AllUndefined));
    }

    #[test]
    fn metric_names_roundtrip() {
        for m in Metric::ALL {
            assert_eq!(m.as_str().parse::<Metric>().unwrap(), m);
        }
        assert!("bleu".parse::<Metric>().is_err());
    }
}
