//! Hybrid keyword/similarity retrieval over knowledge chunks.
//!
//! Keyword relevance is BM25 over the chunks' term frequencies, similarity is
//! the cosine between embeddings. Both are min-max normalized over the
//! candidate set before they are mixed with weight `alpha`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::chunk::KnowledgeChunk;
use super::embed::{cosine, tokenize};

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;
pub const DEFAULT_ALPHA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub chunk_id: usize,
    pub score: f64,
    /// Normalized BM25 component.
    pub keyword_score: f64,
    /// Normalized cosine component.
    pub similarity_score: f64,
}

/// Chunks plus an inverted index.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub chunks: Vec<KnowledgeChunk>,
    pub alpha: f64,
    postings: HashMap<String, Vec<(usize, u32)>>,
    doc_len: Vec<f64>,
    avgdl: f64,
}

/// BM25 inverse document frequency.
pub fn bm25_idf(n: usize, df: usize) -> f64 {
    let (n, df) = (n as f64, df as f64);
    ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
}

/// BM25 contribution of one term occurring `tf` times in a document.
pub fn bm25_term(idf: f64, tf: f64, dl: f64, avgdl: f64) -> f64 {
    let norm = if avgdl > 0.0 { dl / avgdl } else { 0.0 };
    idf * tf * (BM25_K1 + 1.0) / (tf + BM25_K1 * (1.0 - BM25_B + BM25_B * norm))
}

/// Distinct query tokens in first-occurrence order.
pub fn query_terms(query: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for t in tokenize(query) {
        if !out.contains(&t) {
            out.push(t);
        }
    }
    out
}

/// Maps values onto [0, 1]; a constant vector maps to all zeros.
pub fn min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // NaN-safe: anything but a proper range is flat
    if hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

impl Corpus {
    pub fn new(chunks: Vec<KnowledgeChunk>) -> Self {
        let mut postings: HashMap<String, Vec<(usize, u32)>> = HashMap::new();
        let mut doc_len = Vec::with_capacity(chunks.len());
        for (idx, c) in chunks.iter().enumerate() {
            for (term, tf) in &c.term_freqs {
                postings.entry(term.clone()).or_default().push((idx, *tf));
            }
            doc_len.push(f64::from(c.len()));
        }
        let avgdl = if chunks.is_empty() {
            0.0
        } else {
            doc_len.iter().sum::<f64>() / chunks.len() as f64
        };
        Self {
            chunks,
            alpha: DEFAULT_ALPHA,
            postings,
            doc_len,
            avgdl,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn chunk(&self, id: usize) -> Option<&KnowledgeChunk> {
        self.chunks.iter().find(|c| c.id == id)
    }

    /// Raw BM25 score of every chunk, in chunk order.
    pub fn keyword_scores(&self, query: &str) -> Vec<f64> {
        let n = self.chunks.len();
        let mut scores = vec![0.0; n];
        for term in query_terms(query) {
            let Some(posting) = self.postings.get(&term) else {
                continue;
            };
            let idf = bm25_idf(n, posting.len());
            for &(idx, tf) in posting {
                scores[idx] += bm25_term(idf, f64::from(tf), self.doc_len[idx], self.avgdl);
            }
        }
        scores
    }

    /// Top `k` chunks for the query; ties go to the lower chunk id.
    pub fn retrieve(&self, query: &str, query_embedding: &[f64], k: usize) -> Vec<RetrievalHit> {
        let kw = min_max(&self.keyword_scores(query));
        let sims: Vec<f64> = self
            .chunks
            .iter()
            .map(|c| cosine(&c.embedding, query_embedding))
            .collect();
        let sim = min_max(&sims);
        let mut hits: Vec<RetrievalHit> = self
            .chunks
            .iter()
            .enumerate()
            .map(|(i, c)| RetrievalHit {
                chunk_id: c.id,
                score: self.alpha * sim[i] + (1.0 - self.alpha) * kw[i],
                keyword_score: kw[i],
                similarity_score: sim[i],
            })
            .collect();
        hits.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.chunk_id.cmp(&b.chunk_id)));
        hits.truncate(k);
        hits
    }
}
