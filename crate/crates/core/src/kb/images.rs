//! Example images and few-shot vision prompts.

use std::path::PathBuf;

use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::types::{ChatMessage, ContentPart, Role};

/// Default cap on the summed base64 payload of one prompt.
pub const DEFAULT_PAYLOAD_LIMIT: usize = 20 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagePayload {
    pub media_type: String,
    pub data_base64: String,
}

impl ImagePayload {
    pub fn from_bytes(media_type: impl Into<String>, bytes: &[u8]) -> Self {
        Self {
            media_type: media_type.into(),
            data_base64: base64::engine::general_purpose::STANDARD.encode(bytes),
        }
    }

    pub fn png(bytes: &[u8]) -> Self {
        Self::from_bytes("image/png", bytes)
    }

    pub fn decode(&self) -> Option<Vec<u8>> {
        base64::engine::general_purpose::STANDARD
            .decode(&self.data_base64)
            .ok()
    }

    fn part(&self) -> ContentPart {
        ContentPart::Image {
            media_type: self.media_type.clone(),
            data_base64: self.data_base64.clone(),
        }
    }
}

pub fn media_type_for(ext: &str) -> &'static str {
    match ext {
        "png" => "image/png",
        _ => "image/jpeg",
    }
}

/// A captioned example image from the knowledge base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageExample {
    pub path: PathBuf,
    pub image: ImagePayload,
    pub caption: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("image payload of {size} bytes exceeds the {limit} byte limit")]
pub struct OversizeError {
    pub size: usize,
    pub limit: usize,
}

pub const DESCRIBE_INSTRUCTION: &str = "Describe this reconstruction in the same way as the previous examples.";

/// Builds the message sequence `u(image), a(caption), ..., u(new image + instruction)`.
pub fn assemble_fewshot_image_prompt(
    examples: &[ImageExample],
    new_image: &ImagePayload,
    instruction: &str,
    limit: usize,
) -> Result<Vec<ChatMessage>, OversizeError> {
    let size: usize = examples
        .iter()
        .map(|e| e.image.data_base64.len())
        .sum::<usize>()
        + new_image.data_base64.len();
    if size > limit {
        return Err(OversizeError { size, limit });
    }
    let mut out = Vec::with_capacity(examples.len() * 2 + 1);
    for ex in examples {
        out.push(ChatMessage {
            role: Role::User,
            parts: vec![ex.image.part()],
        });
        out.push(ChatMessage::assistant(ex.caption.clone()));
    }
    out.push(ChatMessage {
        role: Role::User,
        parts: vec![
            new_image.part(),
            ContentPart::Text {
                text: instruction.to_string(),
            },
        ],
    });
    Ok(out)
}
