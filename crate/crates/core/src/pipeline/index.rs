use num_traits::Float;

use super::chunker::Chunk;
use super::PipelineError;

/// Exact cosine-similarity index over chunk embeddings. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex<F> {
    dim: usize,
    chunks: Vec<Chunk>,
    vectors: Vec<Vec<F>>,
    norms: Vec<F>,
}

/// Top-k result; `truncated` is set when fewer than `k` chunks exist.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult<F> {
    pub hits: Vec<(usize, F)>,
    pub truncated: bool,
}

fn norm<F: Float>(v: &[F]) -> F {
    v.iter().fold(F::zero(), |acc, &x| acc + x * x).sqrt()
}

impl<F: Float> VectorIndex<F> {
    pub fn build(chunks: Vec<Chunk>, vectors: Vec<Vec<F>>) -> Result<Self, PipelineError> {
        if chunks.len() != vectors.len() {
            return Err(PipelineError::Protocol(format!("{} chunks but {} vectors", chunks.len(), vectors.len())));
        }
        let dim = vectors.first().map_or(0, Vec::len);
        if let Some(bad) = vectors.iter().position(|v| v.len() != dim) {
            return Err(PipelineError::Protocol(format!(
                "vector {bad} has dimension {} instead of {dim}",
                vectors[bad].len()
            )));
        }
        let norms = vectors.iter().map(|v| norm(v)).collect();
        Ok(VectorIndex { dim, chunks, vectors, norms })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn chunk(&self, position: usize) -> &Chunk {
        &self.chunks[position]
    }

    /// Cosine similarity between the query and the chunk at `position`; 0 when either vector is zero.
    pub fn similarity(&self, query: &[F], query_norm: F, position: usize) -> F {
        let denom = query_norm * self.norms[position];
        if denom == F::zero() {
            return F::zero();
        }
        let dot = query.iter().zip(&self.vectors[position]).fold(F::zero(), |acc, (&a, &b)| acc + a * b);
        dot / denom
    }

    /// The `k` most similar chunks, best first. Equal scores go to the lower chunk id.
    pub fn search(&self, query: &[F], k: usize) -> Result<SearchResult<F>, PipelineError> {
        if !self.is_empty() && query.len() != self.dim {
            return Err(PipelineError::Protocol(format!("query dimension {} but index dimension {}", query.len(), self.dim)));
        }
        let qn = norm(query);
        let mut scored: Vec<(usize, F)> = (0..self.len()).map(|i| (i, self.similarity(query, qn, i))).collect();
        // NaN similarities sort last
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or_else(|| a.1.is_nan().cmp(&b.1.is_nan()))
                .then_with(|| self.chunks[a.0].chunk_id.cmp(&self.chunks[b.0].chunk_id))
        });
        let truncated = k > scored.len();
        scored.truncate(k);
        Ok(SearchResult { hits: scored, truncated })
    }
}
