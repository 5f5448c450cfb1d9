//! Live RAG pipeline: chunking, embedding, exact retrieval, prompting and generation
//! against external model services.

mod chunker;
mod index;
mod live;
mod service;
mod template;

use thiserror::Error;

pub use chunker::{chunk_corpus, chunk_document, stride, token_spans, window_spans, Chunk};
pub use index::{SearchResult, VectorIndex};
pub use live::{LiveEvaluator, LiveSettings, LiveStats};
pub use service::{
    bounded_map, build_index, generate, retrieve, BuiltIndex, Embedder, Generation, GenerationOutcome, Generator,
    HttpService, Judge, JudgeRequest, ServiceEndpoint,
};
pub use template::{PromptTemplate, TemplateStore, DOCUMENTS_PLACEHOLDER, QUESTION_PLACEHOLDER, TEMPLATE_FORMAT_VERSION};

#[derive(Debug, Error)]
pub enum PipelineError {
    /// Retries exhausted on a transport error or a retryable status.
    #[error("{url}: unavailable after {attempts} attempt(s): {last}")]
    Unavailable { url: String, attempts: u32, last: String },
    /// The service answered with a non-retryable status.
    #[error("{url}: rejected with status {status}: {message}")]
    Rejected { url: String, status: u16, message: String },
    /// The service answered with something that breaks the contract.
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("index {fingerprint}: {done} of {total} embedding batches finished before failure: {source}")]
    IndexBuild { fingerprint: String, done: usize, total: usize, source: Box<PipelineError> },
    #[error("template {origin}: {message}")]
    Template { origin: String, message: String },
    #[error("no prompt template for generative model `{0}`")]
    MissingTemplate(String),
    #[error("invalid endpoint: {0}")]
    Endpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    /// Whether the failure is an outage worth suspending on rather than a defect.
    pub fn is_unavailable(&self) -> bool {
        match self {
            PipelineError::Unavailable { .. } => true,
            PipelineError::IndexBuild { source, .. } => source.is_unavailable(),
            _ => false,
        }
    }
}

impl From<PipelineError> for crate::evaluator::EvalError {
    fn from(e: PipelineError) -> Self {
        if e.is_unavailable() {
            crate::evaluator::EvalError::Service(e.to_string())
        } else {
            crate::evaluator::EvalError::Pipeline(e.to_string())
        }
    }
}
