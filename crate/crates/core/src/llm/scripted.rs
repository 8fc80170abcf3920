//! Deterministic stand-in for a remote model, with optional fault injection.
//!
//! Faults are drawn from a ChaCha generator seeded by the configured seed
//! mixed with a hash of the request, so a given request always meets the same
//! fault regardless of call order or thread. The uniform draw that decides
//! whether a fault happens comes first, which couples runs at different
//! rates: raising the rate only adds faults.

use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{ChatProvider, ChatRequest, ChatResponse, LlmError};

/// Condition on a request, evaluated over its last user message.
#[derive(Debug, Clone)]
pub enum Matcher {
    Any,
    Contains(String),
    Regex(Regex),
    /// Substring of the system prompt.
    System(String),
    AllOf(Vec<Matcher>),
}

impl Matcher {
    pub fn contains(s: &str) -> Self {
        Matcher::Contains(s.to_string())
    }

    pub fn regex(pattern: &str) -> Result<Self, regex::Error> {
        Ok(Matcher::Regex(Regex::new(pattern)?))
    }

    pub fn matches(&self, request: &ChatRequest) -> bool {
        match self {
            Matcher::Any => true,
            Matcher::Contains(s) => request.last_user_text().contains(s.as_str()),
            Matcher::Regex(r) => r.is_match(&request.last_user_text()),
            Matcher::System(s) => request.system_text().contains(s.as_str()),
            Matcher::AllOf(ms) => ms.iter().all(|m| m.matches(request)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    DropField,
    MutateNumber,
    MalformOutput,
}

impl FaultKind {
    pub const ALL: [FaultKind; 3] = [FaultKind::DropField, FaultKind::MutateNumber, FaultKind::MalformOutput];

    pub fn as_str(self) -> &'static str {
        match self {
            FaultKind::DropField => "drop_field",
            FaultKind::MutateNumber => "mutate_number",
            FaultKind::MalformOutput => "malform_output",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultConfig {
    /// Probability of a fault per call.
    pub rate: f64,
    pub kinds: Vec<FaultKind>,
    pub seed: u64,
}

impl FaultConfig {
    pub fn none() -> Self {
        Self {
            rate: 0.0,
            kinds: FaultKind::ALL.to_vec(),
            seed: 0,
        }
    }

    pub fn all_kinds(rate: f64, seed: u64) -> Self {
        Self {
            rate,
            kinds: FaultKind::ALL.to_vec(),
            seed,
        }
    }
}

#[derive(Debug, Clone)]
struct Entry {
    matcher: Matcher,
    response: String,
    once: bool,
    used: bool,
}

/// Canned responses looked up in order; the first match wins.
pub struct ScriptedProvider {
    entries: Mutex<Vec<Entry>>,
    fallback: Option<Arc<dyn ChatProvider>>,
    faults: FaultConfig,
    vision: bool,
}

impl std::fmt::Debug for ScriptedProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScriptedProvider")
            .field("faults", &self.faults)
            .field("has_fallback", &self.fallback.is_some())
            .finish_non_exhaustive()
    }
}

impl ScriptedProvider {
    pub fn new(script: Vec<(Matcher, String)>) -> Self {
        Self {
            entries: Mutex::new(
                script
                    .into_iter()
                    .map(|(matcher, response)| Entry {
                        matcher,
                        response,
                        once: false,
                        used: false,
                    })
                    .collect(),
            ),
            fallback: None,
            faults: FaultConfig::none(),
            vision: true,
        }
    }

    /// Pure reference model behind an empty script.
    pub fn reference() -> Self {
        Self::new(Vec::new()).with_fallback(Arc::new(super::ReferenceModel))
    }

    /// Answers requests no entry matches.
    pub fn with_fallback(mut self, fallback: Arc<dyn ChatProvider>) -> Self {
        self.fallback = Some(fallback);
        self
    }

    pub fn with_faults(mut self, faults: FaultConfig) -> Self {
        self.faults = faults;
        self
    }

    pub fn without_vision(mut self) -> Self {
        self.vision = false;
        self
    }

    /// Adds an entry ahead of the existing ones.
    pub fn push_front(&self, matcher: Matcher, response: impl Into<String>, once: bool) {
        self.entries.lock().expect("script lock").insert(
            0,
            Entry {
                matcher,
                response: response.into(),
                once,
                used: false,
            },
        );
    }

    fn lookup(&self, request: &ChatRequest) -> Option<String> {
        let mut entries = self.entries.lock().expect("script lock");
        let entry = entries.iter_mut().find(|e| !(e.once && e.used) && e.matcher.matches(request))?;
        entry.used = true;
        Some(entry.response.clone())
    }

    fn rng_for(&self, request: &ChatRequest) -> ChaCha8Rng {
        let digest = Sha256::digest(request.fingerprint().as_bytes());
        let mut head = [0u8; 8];
        head.copy_from_slice(&digest[..8]);
        ChaCha8Rng::seed_from_u64(self.faults.seed ^ u64::from_le_bytes(head))
    }
}

impl ChatProvider for ScriptedProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let content = match self.lookup(request) {
            Some(c) => c,
            None => match &self.fallback {
                Some(f) => f.complete(request)?.content,
                None => return Err(LlmError::NoMatch),
            },
        };
        let mut rng = self.rng_for(request);
        let u: f64 = rng.gen();
        let content = if u < self.faults.rate && !self.faults.kinds.is_empty() {
            let kind = self.faults.kinds[rng.gen_range(0..self.faults.kinds.len())];
            inject(kind, &content, &mut rng)
        } else {
            content
        };
        Ok(ChatResponse::local(request, content))
    }

    fn supports_vision(&self, _model: &str) -> bool {
        self.vision
    }
}

/// Applies one fault to a reply.
pub fn inject(kind: FaultKind, content: &str, rng: &mut impl Rng) -> String {
    match kind {
        FaultKind::DropField => drop_field(content, rng).unwrap_or_else(|| malform(content)),
        FaultKind::MutateNumber => mutate_number(content, rng).unwrap_or_else(|| malform(content)),
        FaultKind::MalformOutput => malform(content),
    }
}

/// Leaf paths of a JSON object, depth first in key order.
fn leaf_paths(v: &Value, prefix: &mut Vec<String>, out: &mut Vec<Vec<String>>) {
    if let Value::Object(map) = v {
        for (k, child) in map {
            prefix.push(k.clone());
            match child {
                Value::Object(m) if !m.is_empty() => leaf_paths(child, prefix, out),
                _ => out.push(prefix.clone()),
            }
            prefix.pop();
        }
    }
}

fn drop_field(content: &str, rng: &mut impl Rng) -> Option<String> {
    let mut v: Value = super::schema::parse_json_reply(content).ok()?;
    let mut paths = Vec::new();
    leaf_paths(&v, &mut Vec::new(), &mut paths);
    if paths.is_empty() {
        return None;
    }
    let path = &paths[rng.gen_range(0..paths.len())];
    let mut cur = &mut v;
    for key in &path[..path.len() - 1] {
        cur = cur.get_mut(key)?;
    }
    cur.as_object_mut()?.remove(path.last()?);
    Some(v.to_string())
}

fn mutate_number(content: &str, rng: &mut impl Rng) -> Option<String> {
    let re = Regex::new(r"\d+(?:\.\d+)?").expect("number pattern");
    let spans: Vec<(usize, usize)> = re
        .find_iter(content)
        .filter(|m| {
            // whole numbers only: not part of an identifier
            let before = content[..m.start()].chars().next_back();
            let after = content[m.end()..].chars().next();
            !before.is_some_and(|c| c.is_alphanumeric() || c == '_')
                && !after.is_some_and(|c| c.is_alphanumeric() || c == '_')
        })
        .map(|m| (m.start(), m.end()))
        .collect();
    if spans.is_empty() {
        return None;
    }
    let (s, e) = spans[rng.gen_range(0..spans.len())];
    let number = &content[s..e];
    let mutated = match number.split_once('.') {
        Some((int, frac)) => format!("{}.{frac}", int.parse::<u64>().ok()? + 1),
        None => (number.parse::<u64>().ok()? + 1).to_string(),
    };
    Some(format!("{}{}{}", &content[..s], mutated, &content[e..]))
}

fn malform(content: &str) -> String {
    let cut = content.char_indices().nth(content.chars().count() / 2).map_or(0, |(i, _)| i);
    format!("Sure, here is the answer: {}", &content[..cut])
}
