use serde::{Deserialize, Serialize};

use crate::dataio::Document;
use crate::searchspace::{IndexConfig, Overlap};

/// A window of whitespace tokens from one document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: usize,
    pub source_doc_id: String,
    /// First token of the window.
    pub start: usize,
    /// Number of tokens in the window.
    pub len: usize,
    /// The original text from the first token through the last, inner whitespace preserved.
    pub text: String,
}

/// Byte ranges of the whitespace-separated tokens of `text`.
pub fn token_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                spans.push((s, i));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    spans
}

/// Step between window starts: `size - floor(size * overlap)`, at least 1.
pub fn stride(size: usize, overlap: Overlap) -> usize {
    (size - overlap.overlap_tokens(size as u32) as usize).max(1)
}

/// `(start, len)` token windows over a document of `n` tokens.
///
/// Windows start every `stride` tokens until one reaches the end; the last may be shorter.
pub fn window_spans(n: usize, size: usize, overlap: Overlap) -> Vec<(usize, usize)> {
    assert!(size >= 1, "chunk size must be positive");
    if n == 0 {
        return Vec::new();
    }
    let step = stride(size, overlap);
    let mut spans = Vec::new();
    let mut start = 0;
    loop {
        let len = size.min(n - start);
        spans.push((start, len));
        if start + len >= n {
            return spans;
        }
        start += step;
    }
}

/// Splits one document; chunk ids continue from `first_id`.
pub fn chunk_document(doc: &Document, size: usize, overlap: Overlap, first_id: usize) -> Vec<Chunk> {
    let tokens = token_spans(&doc.text);
    window_spans(tokens.len(), size, overlap)
        .into_iter()
        .enumerate()
        .map(|(i, (start, len))| Chunk {
            chunk_id: first_id + i,
            source_doc_id: doc.doc_id.clone(),
            start,
            len,
            text: doc.text[tokens[start].0..tokens[start + len - 1].1].to_string(),
        })
        .collect()
}

/// Chunks a corpus in order with consecutive ids from 0.
pub fn chunk_corpus(corpus: &[Document], config: &IndexConfig) -> Vec<Chunk> {
    let mut out = Vec::new();
    for doc in corpus {
        let chunks = chunk_document(doc, config.chunk_size as usize, config.chunk_overlap, out.len());
        out.extend(chunks);
    }
    out
}
