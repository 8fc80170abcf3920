//! OpenAI-compatible chat-completions client.

use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::{ChatMessage, ChatProvider, ChatRequest, ChatResponse, ContentPart, LlmError, TokenUsage};

pub const API_KEY_VAR: &str = "PEAR_LLM_API_KEY";
pub const BASE_URL_VAR: &str = "PEAR_LLM_BASE_URL";
pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Clone)]
pub struct RemoteProvider {
    pub base_url: String,
    api_key: Option<String>,
    pub timeout: Duration,
    /// Model names that must not receive images.
    pub text_only_models: Vec<String>,
    client: reqwest::blocking::Client,
}

impl RemoteProvider {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| LlmError::Provider {
                status: None,
                body: e.to_string(),
            })?;
        Ok(Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            timeout,
            text_only_models: Vec::new(),
            client,
        })
    }

    /// Base URL and key from `PEAR_LLM_BASE_URL` and `PEAR_LLM_API_KEY`.
    pub fn from_env(timeout: Duration) -> Result<Self, LlmError> {
        let base = std::env::var(BASE_URL_VAR).unwrap_or_else(|_| DEFAULT_BASE_URL.to_string());
        Self::new(base, std::env::var(API_KEY_VAR).ok(), timeout)
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url)
    }
}

fn message_json(m: &ChatMessage) -> Value {
    if !m.has_image() {
        return json!({"role": m.role.as_str(), "content": m.text_content()});
    }
    let parts: Vec<Value> = m
        .parts
        .iter()
        .map(|p| match p {
            ContentPart::Text { text } => json!({"type": "text", "text": text}),
            ContentPart::Image {
                media_type,
                data_base64,
            } => json!({
                "type": "image_url",
                "image_url": {"url": format!("data:{media_type};base64,{data_base64}")}
            }),
        })
        .collect();
    json!({"role": m.role.as_str(), "content": parts})
}

/// Request body in the chat-completions wire format.
pub fn request_body(req: &ChatRequest) -> Value {
    let mut body = json!({
        "model": req.model,
        "messages": req.messages.iter().map(message_json).collect::<Vec<_>>(),
        "temperature": req.temperature,
        "max_tokens": req.max_tokens,
    });
    if req.structured_schema.is_some() {
        body["response_format"] = json!({"type": "json_object"});
    }
    body
}

/// Extracts the reply from a chat-completions response body.
pub fn parse_response(body: &Value, latency_ms: u64) -> Result<ChatResponse, LlmError> {
    let choice = body.get("choices").and_then(|c| c.get(0)).ok_or_else(|| LlmError::Provider {
        status: None,
        body: format!("response has no choices: {body}"),
    })?;
    let content = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    if content.is_empty() {
        return Err(LlmError::Provider {
            status: None,
            body: "empty completion".into(),
        });
    }
    let usage = TokenUsage {
        prompt: body.pointer("/usage/prompt_tokens").and_then(Value::as_u64).unwrap_or(0),
        completion: body.pointer("/usage/completion_tokens").and_then(Value::as_u64).unwrap_or(0),
    };
    Ok(ChatResponse {
        content,
        finish_reason: choice.get("finish_reason").and_then(Value::as_str).unwrap_or("").to_string(),
        usage,
        latency_ms,
    })
}

impl ChatProvider for RemoteProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let started = Instant::now();
        let mut http = self.client.post(self.endpoint()).json(&request_body(request));
        if let Some(key) = &self.api_key {
            http = http.bearer_auth(key);
        }
        let resp = http.send().map_err(|e| {
            if e.is_timeout() {
                LlmError::Timeout {
                    secs: self.timeout.as_secs(),
                }
            } else {
                LlmError::Provider {
                    status: None,
                    body: e.to_string(),
                }
            }
        })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| LlmError::Provider {
            status: Some(status.as_u16()),
            body: e.to_string(),
        })?;
        if !status.is_success() {
            return Err(LlmError::Provider {
                status: Some(status.as_u16()),
                body: text,
            });
        }
        let body: Value = serde_json::from_str(&text).map_err(|e| LlmError::Provider {
            status: Some(status.as_u16()),
            body: format!("invalid JSON body ({e}): {text}"),
        })?;
        parse_response(&body, started.elapsed().as_millis() as u64)
    }

    fn supports_vision(&self, model: &str) -> bool {
        !self.text_only_models.iter().any(|m| m == model)
    }
}
