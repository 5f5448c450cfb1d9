use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use super::service::{bounded_map, build_index, generate, retrieve, BuiltIndex, Embedder, Generator, Judge, JudgeRequest};
use super::template::TemplateStore;
use super::PipelineError;
use crate::dataio::{Dataset, Split};
use crate::evaluator::{CostDelta, EvalError, EvalMode, Evaluator, Objective, Scored};
use crate::metrics::{
    context_correctness_mrr, faithfulness_precision, lexical_answer_correctness, Metric, QuestionEval, RetrievedChunk,
};
use crate::scalar::Scalar;
use crate::searchspace::{IndexConfig, RagConfig, SearchSpace};

/// Batching and concurrency for the live pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LiveSettings {
    pub embed_batch_size: usize,
    pub embed_in_flight: usize,
    pub generate_in_flight: usize,
}

impl Default for LiveSettings {
    fn default() -> Self {
        LiveSettings { embed_batch_size: 32, embed_in_flight: 4, generate_in_flight: 4 }
    }
}

/// Running counts of things a caller may want to warn about.
#[derive(Debug, Default)]
pub struct LiveStats {
    pub indexes_built: AtomicU64,
    pub failed_questions: AtomicU64,
    pub estimated_generations: AtomicU64,
    pub truncated_retrievals: AtomicU64,
}

impl LiveStats {
    pub fn get(counter: &AtomicU64) -> u64 {
        counter.load(Ordering::Relaxed)
    }
}

/// Which corpus a split retrieves from.
fn corpus_tag(dataset: &Dataset, split: Split) -> &'static str {
    match (split, &dataset.test_corpus) {
        (Split::Test, Some(_)) => "test",
        _ => "main",
    }
}

/// Evaluates configurations by running the pipeline against model services.
///
/// Indexes and question embeddings are cached, so each index is built once per corpus.
pub struct LiveEvaluator {
    space: SearchSpace,
    dataset: Dataset,
    templates: TemplateStore,
    embedder: Arc<dyn Embedder>,
    generator: Arc<dyn Generator>,
    judge: Option<Arc<dyn Judge>>,
    settings: LiveSettings,
    indexes: Mutex<HashMap<(String, &'static str), Arc<BuiltIndex>>>,
    queries: Mutex<HashMap<(String, Split), Arc<Vec<Vec<f64>>>>>,
    stats: LiveStats,
}

impl LiveEvaluator {
    pub fn new(
        space: SearchSpace,
        dataset: Dataset,
        templates: TemplateStore,
        embedder: Arc<dyn Embedder>,
        generator: Arc<dyn Generator>,
    ) -> Result<Self, PipelineError> {
        templates.check_space(&space)?;
        Ok(LiveEvaluator {
            space,
            dataset,
            templates,
            embedder,
            generator,
            judge: None,
            settings: LiveSettings::default(),
            indexes: Mutex::new(HashMap::new()),
            queries: Mutex::new(HashMap::new()),
            stats: LiveStats::default(),
        })
    }

    pub fn with_judge(mut self, judge: Arc<dyn Judge>) -> Self {
        self.judge = Some(judge);
        self
    }

    pub fn with_settings(mut self, settings: LiveSettings) -> Self {
        self.settings = settings;
        self
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn stats(&self) -> &LiveStats {
        &self.stats
    }

    /// The index for `config` over the corpus `split` retrieves from, built on first use.
    pub fn index(&self, config: &IndexConfig, split: Split) -> Result<Arc<BuiltIndex>, PipelineError> {
        let key = (config.fingerprint(), corpus_tag(&self.dataset, split));
        if let Some(hit) = self.indexes.lock().expect("index cache").get(&key) {
            return Ok(Arc::clone(hit));
        }
        // Built outside the lock; a concurrent duplicate build yields an identical index.
        let built = Arc::new(build_index(
            self.dataset.corpus_for(split),
            config,
            self.embedder.as_ref(),
            self.settings.embed_batch_size,
            self.settings.embed_in_flight,
        )?);
        let mut cache = self.indexes.lock().expect("index cache");
        let entry = cache.entry(key).or_insert_with(|| {
            self.stats.indexes_built.fetch_add(1, Ordering::Relaxed);
            built
        });
        Ok(Arc::clone(entry))
    }

    fn question_vectors(&self, model: &str, split: Split) -> Result<Arc<Vec<Vec<f64>>>, PipelineError> {
        let key = (model.to_string(), split);
        if let Some(hit) = self.queries.lock().expect("query cache").get(&key) {
            return Ok(Arc::clone(hit));
        }
        let texts: Vec<String> = self.dataset.questions(split).iter().map(|q| q.question.clone()).collect();
        let batches: Vec<&[String]> = texts.chunks(self.settings.embed_batch_size.max(1)).collect();
        let mut vectors = Vec::with_capacity(texts.len());
        for r in bounded_map(&batches, self.settings.embed_in_flight, |b| self.embedder.embed(model, b)) {
            vectors.extend(r?);
        }
        if vectors.len() != texts.len() {
            return Err(PipelineError::Protocol(format!("{} question vectors for {} questions", vectors.len(), texts.len())));
        }
        let vectors = Arc::new(vectors);
        Ok(Arc::clone(self.queries.lock().expect("query cache").entry(key).or_insert(vectors)))
    }
}

/// Outcome for one question before scoring.
struct Answered {
    text: String,
    tokens: Option<(u64, u64)>,
}

impl<S: Scalar> Evaluator<S> for LiveEvaluator {
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
        let ordinal = self.space.ordinal(config)?;
        let generating = metrics.iter().any(|m| m.needs_generation());
        if mode == EvalMode::RetrievalOnly && generating {
            return Err(EvalError::Pipeline("retrieval-only evaluation cannot score generation metrics".into()));
        }
        if metrics.contains(&Metric::JudgeAc) && self.judge.is_none() {
            return Err(EvalError::Pipeline("judge_ac needs a judge endpoint".into()));
        }
        let built = self.index(&config.index, split)?;
        let qvecs = self.question_vectors(&config.index.embedding_model, split)?;
        let questions = self.dataset.questions(split);
        let top_k = config.answer.top_k as usize;

        let mut retrieved = Vec::with_capacity(questions.len());
        for v in qvecs.iter() {
            let (chunks, truncated) = retrieve(&built.index, v, top_k)?;
            if truncated {
                self.stats.truncated_retrievals.fetch_add(1, Ordering::Relaxed);
            }
            retrieved.push(chunks);
        }

        let indices: Vec<usize> = (0..questions.len()).collect();
        let answered: Vec<Result<Answered, PipelineError>> = if generating {
            bounded_map(&indices, self.settings.generate_in_flight, |&i| {
                let out = generate(&questions[i].question, &retrieved[i], &config.answer, &self.templates, self.generator.as_ref())?;
                if out.estimated {
                    self.stats.estimated_generations.fetch_add(1, Ordering::Relaxed);
                }
                Ok(Answered { text: out.text, tokens: Some((out.input_tokens, out.output_tokens)) })
            })
        } else {
            indices.iter().map(|_| Ok(Answered { text: String::new(), tokens: None })).collect()
        };

        let judged: Vec<Option<Result<f64, PipelineError>>> = match (&self.judge, metrics.contains(&Metric::JudgeAc)) {
            (Some(judge), true) => bounded_map(&indices, self.settings.generate_in_flight, |&i| {
                let Ok(a) = &answered[i] else { return None };
                let request = JudgeRequest {
                    question: &questions[i].question,
                    answer: &a.text,
                    gold_answer: &questions[i].gold_answer,
                    contexts: retrieved[i].iter().map(|c| c.text.as_str()).collect(),
                };
                Some(judge.judge(&request))
            }),
            _ => indices.iter().map(|_| None).collect(),
        };

        let mut per_question = Vec::with_capacity(questions.len());
        let mut cost = CostDelta { embedded_tokens: built.embedded_tokens, ..CostDelta::default() };
        let mut failures: Vec<PipelineError> = Vec::new();
        for (((q, chunks), answer), judge) in questions.iter().zip(retrieved).zip(answered).zip(judged) {
            let answer = match answer {
                Ok(a) => a,
                Err(e) => {
                    failures.push(e);
                    continue;
                }
            };
            // Generation happened and is charged even if the judge then fails.
            if let Some((i, o)) = answer.tokens {
                cost.generation_input_tokens += i;
                cost.generation_output_tokens += o;
            }
            let judge_score = match judge {
                Some(Ok(s)) => Some(s),
                Some(Err(e)) => {
                    failures.push(e);
                    continue;
                }
                None => None,
            };
            let scores = score_question::<S>(metrics, &answer.text, &chunks, &q.gold_answer, &q.gold_doc_ids, judge_score)?;
            per_question.push(QuestionEval {
                qid: q.qid.clone(),
                generated_answer: answer.text,
                retrieved: chunks,
                scores,
                generation_tokens: answer.tokens,
            });
        }
        let failed = failures.len();
        if failed > 0 {
            self.stats.failed_questions.fetch_add(failed as u64, Ordering::Relaxed);
            if per_question.is_empty() {
                let outage = failures.iter().any(PipelineError::is_unavailable);
                let message = format!("all {failed} questions failed; last: {}", failures[failed - 1]);
                return Err(if outage { EvalError::Service(message) } else { EvalError::Pipeline(message) });
            }
        }
        Ok(Scored { config: config.clone(), ordinal, split, mode, per_question, failed, cost })
    }

    fn context_correctness_defined(&self, split: Split) -> bool {
        self.dataset.questions(split).iter().any(|q| !q.gold_doc_ids.is_empty())
    }

    fn preflight(&self, objective: &Objective<S>, splits: &[Split]) -> Result<(), EvalError> {
        self.templates.check_space(&self.space)?;
        for metric in objective.metrics() {
            if metric == Metric::JudgeAc && self.judge.is_none() {
                return Err(EvalError::Pipeline("judge_ac needs a judge endpoint".into()));
            }
            for &split in splits {
                if self.dataset.questions(split).is_empty() {
                    return Err(EvalError::Pipeline(format!("{split} split has no questions")));
                }
                if metric == Metric::ContextMrr && !Evaluator::<S>::context_correctness_defined(self, split) {
                    return Err(EvalError::NoGoldDocuments(split));
                }
            }
        }
        Ok(())
    }
}

fn score_question<S: Scalar>(
    metrics: &[Metric],
    answer: &str,
    chunks: &[RetrievedChunk],
    gold_answer: &str,
    gold_doc_ids: &[String],
    judge: Option<f64>,
) -> Result<BTreeMap<Metric, S>, EvalError> {
    let mut scores = BTreeMap::new();
    for &metric in metrics {
        let score = match metric {
            Metric::ContextMrr => context_correctness_mrr(chunks, gold_doc_ids),
            Metric::Faithfulness => Some(faithfulness_precision(answer, chunks)),
            Metric::LexicalAc => lexical_answer_correctness(answer, gold_answer),
            Metric::JudgeAc => match judge {
                Some(j) => Some(
                    S::parse_score(&j.to_string())
                        .ok_or_else(|| EvalError::Pipeline(format!("judge score {j} is not representable")))?,
                ),
                None => None,
            },
        };
        if let Some(s) = score {
            scores.insert(metric, s);
        }
    }
    Ok(scores)
}
