//! Chat-completion request and response types.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ContentPart {
    Text { text: String },
    Image { media_type: String, data_base64: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub parts: Vec<ContentPart>,
}

impl ChatMessage {
    pub fn text(role: Role, text: impl Into<String>) -> Self {
        Self {
            role,
            parts: vec![ContentPart::Text { text: text.into() }],
        }
    }

    pub fn system(text: impl Into<String>) -> Self {
        Self::text(Role::System, text)
    }

    pub fn user(text: impl Into<String>) -> Self {
        Self::text(Role::User, text)
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self::text(Role::Assistant, text)
    }

    /// Concatenated text parts.
    pub fn text_content(&self) -> String {
        let mut out = String::new();
        for part in &self.parts {
            if let ContentPart::Text { text } = part {
                if !out.is_empty() {
                    out.push('\n');
                }
                out.push_str(text);
            }
        }
        out
    }

    pub fn images(&self) -> impl Iterator<Item = (&str, &str)> {
        self.parts.iter().filter_map(|p| match p {
            ContentPart::Image {
                media_type,
                data_base64,
            } => Some((media_type.as_str(), data_base64.as_str())),
            _ => None,
        })
    }

    pub fn has_image(&self) -> bool {
        self.images().next().is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Name of the schema the response must follow, if any.
    #[serde(default)]
    pub structured_schema: Option<String>,
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        Self {
            model: model.into(),
            messages,
            temperature: 0.0,
            max_tokens: 2048,
            structured_schema: None,
        }
    }

    pub fn with_schema(mut self, name: impl Into<String>) -> Self {
        self.structured_schema = Some(name.into());
        self
    }

    pub fn system_text(&self) -> String {
        self.messages
            .iter()
            .filter(|m| m.role == Role::System)
            .map(ChatMessage::text_content)
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn last_user_text(&self) -> String {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(ChatMessage::text_content)
            .unwrap_or_default()
    }

    pub fn has_images(&self) -> bool {
        self.messages.iter().any(ChatMessage::has_image)
    }

    /// Stable text used for hashing and matching; image payloads are
    /// represented by their length only.
    pub fn fingerprint(&self) -> String {
        let mut out = format!("model={}\n", self.model);
        for m in &self.messages {
            out.push_str(m.role.as_str());
            out.push_str(":\n");
            for p in &m.parts {
                match p {
                    ContentPart::Text { text } => out.push_str(text),
                    ContentPart::Image { data_base64, .. } => {
                        out.push_str(&format!("<image {} bytes>", data_base64.len()))
                    }
                }
                out.push('\n');
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt: u64,
    pub completion: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub finish_reason: String,
    pub usage: TokenUsage,
    pub latency_ms: u64,
}

impl ChatResponse {
    /// A response produced locally; token counts are whitespace word counts.
    pub fn local(request: &ChatRequest, content: impl Into<String>) -> Self {
        let content = content.into();
        let prompt = request
            .messages
            .iter()
            .map(|m| m.text_content().split_whitespace().count() as u64)
            .sum();
        let completion = content.split_whitespace().count() as u64;
        Self {
            content,
            finish_reason: "stop".into(),
            usage: TokenUsage { prompt, completion },
            latency_ms: 0,
        }
    }
}
