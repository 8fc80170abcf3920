//! Text embeddings.
//!
//! [`HashingEmbedder`] is the offline default: lowercased word tokens are
//! hashed (FNV-1a, 64 bit) into `dim` buckets, the top hash bit picks the sign,
//! and the vector is L2-normalized. [`RemoteEmbedder`] calls an
//! OpenAI-compatible `/embeddings` endpoint.

use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

pub const DEFAULT_DIM: usize = 256;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedding provider error (status {status}): {body}")]
    Provider { status: u16, body: String },
    #[error("embedding request failed: {0}")]
    Transport(String),
}

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError>;
}

/// Lowercased alphanumeric word tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

// stands in for text without any word token, so such text still gets a unit vector
const EMPTY_TOKEN: &str = "\u{0}empty";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingEmbedder {
    pub dim: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self { dim: DEFAULT_DIM }
    }
}

impl HashingEmbedder {
    fn accumulate(&self, v: &mut [f64], token: &str) {
        let h = fnv1a64(token.as_bytes());
        let bucket = (h % self.dim as u64) as usize;
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        v[bucket] += sign;
    }

    pub fn embed_local(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for tok in tokenize(text) {
            self.accumulate(&mut v, &tok);
        }
        if normalize(&mut v) {
            return v;
        }
        // no tokens, or signed collisions cancelled out
        let mut v = vec![0.0; self.dim];
        self.accumulate(&mut v, EMPTY_TOKEN);
        normalize(&mut v);
        v
    }
}

impl Embedder for HashingEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        Ok(self.embed_local(text))
    }
}

/// Scales `v` to unit length; returns false for the zero vector.
pub fn normalize(v: &mut [f64]) -> bool {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    true
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// OpenAI-compatible embedding endpoint.
pub struct RemoteEmbedder {
    base_url: String,
    api_key: Option<String>,
    model: String,
    dim: usize,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingItem>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    embedding: Vec<f64>,
}

impl RemoteEmbedder {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>, model: impl Into<String>, dim: usize) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .expect("http client");
        Self {
            base_url: base_url.into(),
            api_key,
            model: model.into(),
            dim,
            client,
        }
    }
}

impl Embedder for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        let url = format!("{}/embeddings", self.base_url.trim_end_matches('/'));
        let mut req = self
            .client
            .post(url)
            .json(&serde_json::json!({ "model": self.model, "input": text }));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| EmbedError::Transport(e.to_string()))?;
        let status = resp.status();
        let body = resp.text().map_err(|e| EmbedError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(EmbedError::Provider {
                status: status.as_u16(),
                body,
            });
        }
        let parsed: EmbeddingResponse = serde_json::from_str(&body).map_err(|e| EmbedError::Provider {
            status: status.as_u16(),
            body: format!("unreadable embedding response: {e}"),
        })?;
        let mut v = parsed
            .data
            .into_iter()
            .next()
            .map(|d| d.embedding)
            .ok_or_else(|| EmbedError::Provider {
                status: status.as_u16(),
                body: "empty embedding list".into(),
            })?;
        if !normalize(&mut v) {
            return Err(EmbedError::Provider {
                status: status.as_u16(),
                body: "zero embedding".into(),
            });
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_unit_norm() {
        let e = HashingEmbedder::default();
        let a = e.embed_local("Probe modes and layers");
        assert_eq!(a, e.embed_local("Probe modes and layers"));
        let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
        for text in ["", "  ... ", "!!"] {
            let v = e.embed_local(text);
            assert!((v.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn bag_of_words() {
        let e = HashingEmbedder::default();
        let c = cosine(&e.embed_local("alpha beta"), &e.embed_local("beta alpha"));
        assert!((c - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unrelated_texts_are_far_apart() {
        let e = HashingEmbedder::default();
        let a = e.embed_local("ptychography probe");
        let b = e.embed_local("unrelated zebra");
        // independent oracle: distinct tokens landing in distinct buckets are orthogonal
        let buckets = |t: &str| {
            let h = fnv1a64(t.as_bytes());
            h % 256
        };
        let left = [buckets("ptychography"), buckets("probe")];
        let right = [buckets("unrelated"), buckets("zebra")];
        let shared = left.iter().filter(|b| right.contains(b)).count();
        assert!(cosine(&a, &b) <= shared as f64 * 0.5 + 1e-12);
        assert!(cosine(&a, &b) < 0.5);
    }

    #[test]
    fn fnv_reference_values() {
        // published FNV-1a 64 test vectors
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn tokenizer_lowercases() {
        assert_eq!(tokenize("Hello, World! x2"), vec!["hello", "world", "x2"]);
    }
}
