//! Splitting extracted document text into overlapping chunks.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::embed::{tokenize, Embedder, HashingEmbedder};

pub const DEFAULT_CHUNK_SIZE: usize = 1200;
pub const DEFAULT_OVERLAP: usize = 200;

/// A retrievable slice of a source document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeChunk {
    pub id: usize,
    pub source: PathBuf,
    /// Character offsets into the source text, end exclusive.
    pub span: (usize, usize),
    pub text: String,
    pub term_freqs: BTreeMap<String, u32>,
    pub embedding: Vec<f64>,
}

impl KnowledgeChunk {
    pub fn new(id: usize, source: PathBuf, span: (usize, usize), text: String, embedder: &dyn Embedder) -> Self {
        let embedding = embedder
            .embed(&text)
            .unwrap_or_else(|_| HashingEmbedder::default().embed_local(&text));
        Self {
            id,
            source,
            span,
            term_freqs: term_freqs(&text),
            text,
            embedding,
        }
    }

    /// Token count, the BM25 document length.
    pub fn len(&self) -> u32 {
        self.term_freqs.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.term_freqs.is_empty()
    }
}

pub fn term_freqs(text: &str) -> BTreeMap<String, u32> {
    let mut out = BTreeMap::new();
    for tok in tokenize(text) {
        *out.entry(tok).or_insert(0) += 1;
    }
    out
}

fn is_break(chars: &[char], pos: usize) -> bool {
    if pos == 0 || pos >= chars.len() {
        return false;
    }
    chars[pos] == '\n' || (matches!(chars[pos - 1], '.' | '!' | '?') && chars[pos].is_whitespace())
}

/// Character spans of the chunks of `text`.
///
/// Each window is `chunk_size` characters; its end moves back to the nearest
/// paragraph or sentence break within the last 20% of the window, and the next
/// window starts `overlap` characters before that end.
pub fn chunk_spans(text: &str, chunk_size: usize, overlap: usize) -> Vec<(usize, usize)> {
    assert!(chunk_size > overlap, "chunk_size must exceed overlap");
    let chars: Vec<char> = text.chars().collect();
    let n = chars.len();
    let mut spans = Vec::new();
    let mut start = 0;
    while start < n {
        if n - start <= chunk_size {
            spans.push((start, n));
            break;
        }
        let mut end = start + chunk_size;
        let lowest = (end - chunk_size / 5).max(start + overlap + 1);
        if let Some(mut b) = (lowest..=end).rev().find(|&b| is_break(&chars, b)) {
            // cut before a run of breaks such as a blank line
            while b > lowest && is_break(&chars, b - 1) {
                b -= 1;
            }
            end = b;
        }
        spans.push((start, end));
        start = end - overlap;
    }
    spans
}

/// Chunks a document with the default hashing embedder. Ids start at 0.
pub fn chunk_document(text: &str, chunk_size: usize, overlap: usize) -> Vec<KnowledgeChunk> {
    let embedder = HashingEmbedder::default();
    chunk_with(text, chunk_size, overlap, PathBuf::new(), 0, &embedder)
}

pub fn chunk_with(
    text: &str,
    chunk_size: usize,
    overlap: usize,
    source: PathBuf,
    first_id: usize,
    embedder: &dyn Embedder,
) -> Vec<KnowledgeChunk> {
    let chars: Vec<char> = text.chars().collect();
    chunk_spans(text, chunk_size, overlap)
        .into_iter()
        .enumerate()
        .map(|(i, (s, e))| {
            let body: String = chars[s..e].iter().collect();
            KnowledgeChunk::new(first_id + i, source.clone(), (s, e), body, embedder)
        })
        .collect()
}
