use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::chunker::{chunk_corpus, Chunk};
use super::index::VectorIndex;
use super::template::TemplateStore;
use super::PipelineError;
use crate::dataio::Document;
use crate::metrics::{tokenize, RetrievedChunk};
use crate::searchspace::{AnswerConfig, IndexConfig};

/// Where a model service lives and how hard to try it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceEndpoint {
    pub base_url: String,
    /// Environment variable holding a bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env: Option<String>,
    #[serde(default = "defaults::timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "defaults::max_attempts")]
    pub max_attempts: u32,
    /// Delay before the first retry; doubled on each further retry.
    #[serde(default = "defaults::backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "defaults::max_in_flight")]
    pub max_in_flight: usize,
    /// Texts per embedding request.
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
}

mod defaults {
    pub fn timeout_ms() -> u64 {
        60_000
    }
    pub fn max_attempts() -> u32 {
        3
    }
    pub fn backoff_ms() -> u64 {
        500
    }
    pub fn max_in_flight() -> usize {
        4
    }
    pub fn batch_size() -> usize {
        32
    }
}

impl ServiceEndpoint {
    pub fn new(base_url: impl Into<String>) -> Self {
        ServiceEndpoint {
            base_url: base_url.into(),
            auth_env: None,
            timeout_ms: defaults::timeout_ms(),
            max_attempts: defaults::max_attempts(),
            backoff_ms: defaults::backoff_ms(),
            max_in_flight: defaults::max_in_flight(),
            batch_size: defaults::batch_size(),
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let err = |m: &str| Err(PipelineError::Endpoint(format!("{}: {m}", self.base_url)));
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return err("base_url must start with http:// or https://");
        }
        if self.timeout_ms == 0 {
            return err("timeout_ms must be positive");
        }
        if self.max_attempts == 0 {
            return err("max_attempts must be at least 1");
        }
        if self.max_in_flight == 0 || self.batch_size == 0 {
            return err("max_in_flight and batch_size must be at least 1");
        }
        Ok(())
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{path}", self.base_url.trim_end_matches('/'))
    }
}

pub trait Embedder: Send + Sync {
    /// One vector per text, in order.
    fn embed(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, PipelineError>;
}

/// Raw service reply. Token counts are optional in the contract.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Generation {
    pub text: String,
    #[serde(default)]
    pub input_tokens: Option<u64>,
    #[serde(default)]
    pub output_tokens: Option<u64>,
}

pub trait Generator: Send + Sync {
    /// Greedy (deterministic) completion of `prompt`.
    fn generate(&self, model: &str, prompt: &str) -> Result<Generation, PipelineError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct JudgeRequest<'a> {
    pub question: &'a str,
    pub answer: &'a str,
    pub gold_answer: &'a str,
    pub contexts: Vec<&'a str>,
}

/// Remote answer-correctness judge returning a score in [0, 1].
pub trait Judge: Send + Sync {
    fn judge(&self, request: &JudgeRequest<'_>) -> Result<f64, PipelineError>;
}

#[derive(Serialize)]
struct EmbedBody<'a> {
    model: &'a str,
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedReply {
    vectors: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct GenerateParams {
    temperature: f64,
    greedy: bool,
}

#[derive(Serialize)]
struct GenerateBody<'a> {
    model: &'a str,
    prompt: &'a str,
    params: GenerateParams,
}

#[derive(Deserialize)]
struct JudgeReply {
    score: f64,
}

/// JSON-over-HTTP client for the embed, generate and judge endpoints.
#[derive(Debug)]
pub struct HttpService {
    endpoint: ServiceEndpoint,
    agent: ureq::Agent,
    token: Option<String>,
}

impl HttpService {
    /// Validates the endpoint and reads its auth token from the environment.
    pub fn new(endpoint: ServiceEndpoint) -> Result<Self, PipelineError> {
        endpoint.validate()?;
        let token = match &endpoint.auth_env {
            Some(var) => Some(
                std::env::var(var)
                    .map_err(|_| PipelineError::Endpoint(format!("auth variable {var} is not set")))?,
            ),
            None => None,
        };
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(endpoint.timeout_ms)))
            .http_status_as_error(false)
            .build();
        Ok(HttpService { agent: ureq::Agent::new_with_config(config), endpoint, token })
    }

    pub fn endpoint(&self) -> &ServiceEndpoint {
        &self.endpoint
    }

    fn post<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R, PipelineError> {
        let url = self.endpoint.url(path);
        let mut last = String::new();
        for attempt in 0..self.endpoint.max_attempts {
            if attempt > 0 {
                let factor = 1u64 << (attempt - 1).min(16);
                std::thread::sleep(Duration::from_millis(self.endpoint.backoff_ms.saturating_mul(factor)));
            }
            let mut req = self.agent.post(&url);
            if let Some(token) = &self.token {
                req = req.header("Authorization", format!("Bearer {token}"));
            }
            match req.send_json(body) {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    if (200..300).contains(&status) {
                        return resp
                            .body_mut()
                            .read_json::<R>()
                            .map_err(|e| PipelineError::Protocol(format!("{url}: bad response body: {e}")));
                    }
                    let message = resp.body_mut().read_to_string().unwrap_or_default();
                    if status == 429 || status >= 500 {
                        last = format!("status {status}: {message}");
                        continue;
                    }
                    return Err(PipelineError::Rejected { url, status, message });
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(PipelineError::Unavailable { url, attempts: self.endpoint.max_attempts, last })
    }
}

impl Embedder for HttpService {
    fn embed(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, PipelineError> {
        let reply: EmbedReply = self.post("embed", &EmbedBody { model, texts })?;
        if reply.vectors.len() != texts.len() {
            return Err(PipelineError::Protocol(format!(
                "embed returned {} vectors for {} texts",
                reply.vectors.len(),
                texts.len()
            )));
        }
        Ok(reply.vectors)
    }
}

impl Generator for HttpService {
    fn generate(&self, model: &str, prompt: &str) -> Result<Generation, PipelineError> {
        let params = GenerateParams { temperature: 0.0, greedy: true };
        self.post("generate", &GenerateBody { model, prompt, params })
    }
}

impl Judge for HttpService {
    fn judge(&self, request: &JudgeRequest<'_>) -> Result<f64, PipelineError> {
        let reply: JudgeReply = self.post("judge", request)?;
        if !(0.0..=1.0).contains(&reply.score) {
            return Err(PipelineError::Protocol(format!("judge score {} outside [0, 1]", reply.score)));
        }
        Ok(reply.score)
    }
}

/// Applies `f` to every item with at most `max_in_flight` calls running at once.
/// Results come back in input order whatever the completion order.
pub fn bounded_map<T, R, F>(items: &[T], max_in_flight: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = max_in_flight.max(1).min(items.len());
    if workers <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().expect("slot lock") = Some(r);
            });
        }
    });
    slots.into_iter().map(|s| s.into_inner().expect("slot lock").expect("every slot filled")).collect()
}

/// A built index and what embedding it cost.
#[derive(Debug, Clone, PartialEq)]
pub struct BuiltIndex {
    pub index: VectorIndex<f64>,
    /// Sum of chunk token lengths.
    pub embedded_tokens: u64,
}

/// Chunks `corpus`, embeds the chunks in batches and builds the index.
pub fn build_index(
    corpus: &[Document],
    config: &IndexConfig,
    embedder: &dyn Embedder,
    batch_size: usize,
    max_in_flight: usize,
) -> Result<BuiltIndex, PipelineError> {
    let chunks: Vec<Chunk> = chunk_corpus(corpus, config);
    let embedded_tokens = chunks.iter().map(|c| c.len as u64).sum();
    let texts: Vec<String> = chunks.iter().map(|c| c.text.clone()).collect();
    let batches: Vec<&[String]> = texts.chunks(batch_size.max(1)).collect();
    let results = bounded_map(&batches, max_in_flight, |b| {
        let vectors = embedder.embed(&config.embedding_model, b)?;
        if vectors.len() != b.len() {
            return Err(PipelineError::Protocol(format!("{} vectors for {} texts", vectors.len(), b.len())));
        }
        Ok(vectors)
    });
    let total = results.len();
    let done = results.iter().filter(|r| r.is_ok()).count();
    let mut vectors = Vec::with_capacity(texts.len());
    for r in results {
        match r {
            Ok(v) => vectors.extend(v),
            Err(source) => {
                return Err(PipelineError::IndexBuild {
                    fingerprint: config.fingerprint(),
                    done,
                    total,
                    source: Box::new(source),
                })
            }
        }
    }
    Ok(BuiltIndex { index: VectorIndex::build(chunks, vectors)?, embedded_tokens })
}

/// The `top_k` chunks nearest to an embedded question, ranked from 1, and whether fewer than `top_k` exist.
pub fn retrieve(index: &VectorIndex<f64>, question_vector: &[f64], top_k: usize) -> Result<(Vec<RetrievedChunk>, bool), PipelineError> {
    let found = index.search(question_vector, top_k)?;
    let chunks = found
        .hits
        .iter()
        .enumerate()
        .map(|(rank, &(pos, _))| {
            let c = index.chunk(pos);
            RetrievedChunk { source_doc_id: c.source_doc_id.clone(), rank: rank + 1, text: c.text.clone() }
        })
        .collect();
    Ok((chunks, found.truncated))
}

/// A generated answer with its token accounting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationOutcome {
    pub prompt: String,
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    /// Some count was missing from the reply and was estimated with the lexical tokenizer.
    pub estimated: bool,
}

/// Renders the model's prompt over `retrieved` and asks `generator` for an answer.
pub fn generate(
    question: &str,
    retrieved: &[RetrievedChunk],
    answer: &AnswerConfig,
    templates: &TemplateStore,
    generator: &dyn Generator,
) -> Result<GenerationOutcome, PipelineError> {
    let template = templates.get(&answer.generative_model)?;
    let texts: Vec<&str> = retrieved.iter().map(|c| c.text.as_str()).collect();
    let prompt = template.render(question, &texts);
    let reply = generator.generate(&answer.generative_model, &prompt)?;
    let estimated = reply.input_tokens.is_none() || reply.output_tokens.is_none();
    let input_tokens = reply.input_tokens.unwrap_or_else(|| tokenize(&prompt).len() as u64);
    let output_tokens = reply.output_tokens.unwrap_or_else(|| tokenize(&reply.text).len() as u64);
    Ok(GenerationOutcome { prompt, text: reply.text, input_tokens, output_tokens, estimated })
}
