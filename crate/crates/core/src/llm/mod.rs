//! LLM access: chat types, providers and the gateway.
//!
//! Every agent call goes through [`Gateway`], which records usage in a shared
//! [`Ledger`] and, for structured calls, validates the reply against a
//! [`Schema`] and retries with a corrective message.

pub mod reference;
pub mod remote;
pub mod schema;
pub mod scripted;
pub mod types;

use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::Serialize;
use serde_json::{Map, Value};
use thiserror::Error;

pub use reference::ReferenceModel;
pub use remote::RemoteProvider;
pub use schema::{Schema, SchemaType, Violation};
pub use scripted::{FaultConfig, FaultKind, Matcher, ScriptedProvider};
pub use types::*;

pub const DEFAULT_MAX_RETRIES: u32 = 2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LlmError {
    #[error("provider error (status {status:?}): {body}")]
    Provider { status: Option<u16>, body: String },
    #[error("no scripted response matches the request")]
    NoMatch,
    #[error("request timed out after {secs} s")]
    Timeout { secs: u64 },
    #[error("model `{model}` does not accept images")]
    VisionUnsupported { model: String },
    #[error("no reply to `{schema}` followed the schema after {} attempts: {last_problem}", attempts.len())]
    StructuredOutput {
        schema: String,
        attempts: Vec<String>,
        last_problem: String,
    },
}

/// Anything that answers chat requests.
pub trait ChatProvider: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError>;

    fn supports_vision(&self, _model: &str) -> bool {
        true
    }
}

/// One provider call as recorded in the ledger.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CallRecord {
    pub started: chrono::DateTime<chrono::Utc>,
    pub model: String,
    pub schema: Option<String>,
    pub request: String,
    pub response: Result<String, String>,
    pub latency_ms: u64,
}

/// Accumulated usage; counters only grow.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Ledger {
    pub calls: u64,
    pub structured_calls: u64,
    pub attempts: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub failures: u64,
    pub records: Vec<CallRecord>,
}

/// A conforming structured reply.
#[derive(Debug, Clone, PartialEq)]
pub struct Structured {
    pub value: Map<String, Value>,
    /// Provider calls made, including the successful one.
    pub attempts: u32,
    pub raw: Vec<String>,
}

#[derive(Clone)]
pub struct Gateway {
    provider: Arc<dyn ChatProvider>,
    pub model: String,
    pub max_retries: u32,
    ledger: Arc<Mutex<Ledger>>,
    keep_records: bool,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("model", &self.model)
            .field("max_retries", &self.max_retries)
            .finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(provider: Arc<dyn ChatProvider>, model: impl Into<String>) -> Self {
        Self {
            provider,
            model: model.into(),
            max_retries: DEFAULT_MAX_RETRIES,
            ledger: Arc::new(Mutex::new(Ledger::default())),
            keep_records: true,
        }
    }

    /// Counters only; used by the evaluation harness to bound memory.
    pub fn without_records(mut self) -> Self {
        self.keep_records = false;
        self
    }

    pub fn ledger(&self) -> Ledger {
        self.ledger.lock().expect("ledger lock").clone()
    }

    pub fn supports_vision(&self) -> bool {
        self.provider.supports_vision(&self.model)
    }

    /// A request for this gateway's model.
    pub fn request(&self, messages: Vec<ChatMessage>) -> ChatRequest {
        ChatRequest::new(self.model.clone(), messages)
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        if request.has_images() && !self.supports_vision() {
            return Err(LlmError::VisionUnsupported {
                model: request.model.clone(),
            });
        }
        let started = chrono::Utc::now();
        let clock = Instant::now();
        let result = self.provider.complete(request);
        let latency_ms = clock.elapsed().as_millis() as u64;
        let mut ledger = self.ledger.lock().expect("ledger lock");
        ledger.calls += 1;
        match &result {
            Ok(r) => {
                ledger.prompt_tokens += r.usage.prompt;
                ledger.completion_tokens += r.usage.completion;
            }
            Err(_) => ledger.failures += 1,
        }
        if self.keep_records {
            ledger.records.push(CallRecord {
                started,
                model: request.model.clone(),
                schema: request.structured_schema.clone(),
                request: request.fingerprint(),
                response: match &result {
                    Ok(r) => Ok(r.content.clone()),
                    Err(e) => Err(e.to_string()),
                },
                latency_ms,
            });
        }
        result
    }

    /// Completes `request` and checks the reply against `schema`, retrying
    /// up to `max_retries` times with a corrective message.
    ///
    /// Provider errors other than [`LlmError::Provider`] end the call at once.
    pub fn complete_structured(&self, request: &ChatRequest, schema: &Schema, max_retries: u32) -> Result<Structured, LlmError> {
        let mut req = request.clone().with_schema(schema.name.clone());
        let mut raw = Vec::new();
        let mut last_problem = String::new();
        self.ledger.lock().expect("ledger lock").structured_calls += 1;
        for attempt in 0..=max_retries {
            self.ledger.lock().expect("ledger lock").attempts += 1;
            let reply = match self.complete(&req) {
                Ok(r) => r.content,
                Err(LlmError::Provider { status, body }) => {
                    last_problem = format!("provider error (status {status:?}): {body}");
                    raw.push(String::new());
                    continue;
                }
                Err(e) => return Err(e),
            };
            match schema.check(&reply) {
                Ok(value) => {
                    raw.push(reply);
                    return Ok(Structured {
                        value,
                        attempts: attempt + 1,
                        raw,
                    });
                }
                Err(violations) => {
                    last_problem = violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ");
                    if attempt < max_retries {
                        req.messages.push(ChatMessage::assistant(reply.clone()));
                        req.messages.push(ChatMessage::user(schema::corrective_message(schema, &violations)));
                    }
                    raw.push(reply);
                }
            }
        }
        Err(LlmError::StructuredOutput {
            schema: schema.name.clone(),
            attempts: raw,
            last_problem,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scan_schema() -> Schema {
        Schema::new("scan").required("scan_number", SchemaType::Int)
    }

    fn ask() -> ChatRequest {
        ChatRequest::new("m", vec![ChatMessage::user("What is the scan number? 31")])
    }

    #[test]
    fn structured_first_try() {
        let p = ScriptedProvider::new(vec![(Matcher::Any, "{\"scan_number\": 31}".into())]);
        let gw = Gateway::new(Arc::new(p), "m");
        let s = gw.complete_structured(&ask(), &scan_schema(), 2).unwrap();
        assert_eq!(s.value["scan_number"], 31);
        assert_eq!(s.attempts, 1);
    }

    #[test]
    fn structured_retry_path() {
        let p = ScriptedProvider::new(vec![
            (Matcher::contains("Your previous reply could not be used"), "{\"scan_number\": 31}".into()),
            (Matcher::Any, "thirty-one".into()),
        ]);
        let gw = Gateway::new(Arc::new(p), "m");
        let s = gw.complete_structured(&ask(), &scan_schema(), 2).unwrap();
        assert_eq!(s.value["scan_number"], 31);
        assert_eq!(s.attempts, 2);
        assert_eq!(s.raw, vec!["thirty-one".to_string(), "{\"scan_number\": 31}".to_string()]);
        let l = gw.ledger();
        assert_eq!((l.calls, l.attempts, l.structured_calls), (2, 2, 1));
    }

    #[test]
    fn structured_exhaustion_keeps_every_attempt() {
        let p = ScriptedProvider::new(vec![(Matcher::Any, "{\"scan_number\": 31}".into())]).with_faults(FaultConfig {
            rate: 1.0,
            kinds: vec![FaultKind::MalformOutput],
            seed: 3,
        });
        let gw = Gateway::new(Arc::new(p), "m");
        match gw.complete_structured(&ask(), &scan_schema(), 2).unwrap_err() {
            LlmError::StructuredOutput { attempts, .. } => assert_eq!(attempts.len(), 3),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn images_need_a_vision_model() {
        struct Blind;
        impl ChatProvider for Blind {
            fn complete(&self, r: &ChatRequest) -> Result<ChatResponse, LlmError> {
                Ok(ChatResponse::local(r, "x"))
            }
            fn supports_vision(&self, _: &str) -> bool {
                false
            }
        }
        let gw = Gateway::new(Arc::new(Blind), "m");
        let req = ChatRequest::new(
            "m",
            vec![ChatMessage {
                role: Role::User,
                parts: vec![ContentPart::Image {
                    media_type: "image/png".into(),
                    data_base64: "AA==".into(),
                }],
            }],
        );
        assert!(matches!(gw.complete(&req), Err(LlmError::VisionUnsupported { .. })));
    }
}
