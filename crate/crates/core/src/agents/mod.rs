//! The specialised agents of the workflow.
//!
//! Each agent is a prompt template from the knowledge base plus a parser for
//! the model's reply. Agents are stateless; the orchestrator owns the session
//! state and passes in what each call needs.

pub mod collect;
pub mod confirm;
pub mod feedback;
pub mod prompt;
pub mod questions;
pub mod recommend;
pub mod single;
pub mod summarize;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::images::OversizeError;
use crate::kb::{KbError, KnowledgeBase};
use crate::llm::{ChatMessage, Gateway, LlmError, Schema, Structured};
use crate::rulebook::RuleSet;
pub use prompt::PromptError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AgentRole {
    QuestionGenerator,
    ParamsCollector,
    ParamsValidator,
    ParamsConfirmer,
    ParamsRecommender,
    ParamsFormatter,
    ScriptGenerator,
    ScriptRunner,
    QualityCollector,
    UpdatesRecommender,
    ParamsUpdater,
    ConversationSummarizer,
    QualityAssessor,
}

impl AgentRole {
    pub const ALL: [AgentRole; 13] = [
        AgentRole::QuestionGenerator,
        AgentRole::ParamsCollector,
        AgentRole::ParamsValidator,
        AgentRole::ParamsConfirmer,
        AgentRole::ParamsRecommender,
        AgentRole::ParamsFormatter,
        AgentRole::ScriptGenerator,
        AgentRole::ScriptRunner,
        AgentRole::QualityCollector,
        AgentRole::UpdatesRecommender,
        AgentRole::ParamsUpdater,
        AgentRole::ConversationSummarizer,
        AgentRole::QualityAssessor,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AgentRole::QuestionGenerator => "QuestionGenerator",
            AgentRole::ParamsCollector => "ParamsCollector",
            AgentRole::ParamsValidator => "ParamsValidator",
            AgentRole::ParamsConfirmer => "ParamsConfirmer",
            AgentRole::ParamsRecommender => "ParamsRecommender",
            AgentRole::ParamsFormatter => "ParamsFormatter",
            AgentRole::ScriptGenerator => "ScriptGenerator",
            AgentRole::ScriptRunner => "ScriptRunner",
            AgentRole::QualityCollector => "QualityCollector",
            AgentRole::UpdatesRecommender => "UpdatesRecommender",
            AgentRole::ParamsUpdater => "ParamsUpdater",
            AgentRole::ConversationSummarizer => "ConversationSummarizer",
            AgentRole::QualityAssessor => "QualityAssessor",
        }
    }

    /// The name written after `Agent: ` in the session log.
    pub fn marker(self) -> &'static str {
        match self {
            AgentRole::ConversationSummarizer => "_summarize_conversation",
            other => other.name(),
        }
    }

    pub fn from_marker(marker: &str) -> Option<AgentRole> {
        Self::ALL.into_iter().find(|r| r.marker() == marker)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Speaker {
    Pear,
    User,
    Agent,
}

/// One line of the conversation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub speaker: Speaker,
    pub text: String,
}

impl ChatTurn {
    pub fn pear(text: impl Into<String>) -> Self {
        Self {
            speaker: Speaker::Pear,
            text: text.into(),
        }
    }

    pub fn user(text: impl Into<String>) -> Self {
        Self {
            speaker: Speaker::User,
            text: text.into(),
        }
    }

    pub fn agent(role: AgentRole) -> Self {
        Self {
            speaker: Speaker::Agent,
            text: role.marker().to_string(),
        }
    }
}

/// `PEAR: ...` / `User: ...` lines for prompts; agent markers are left out.
pub fn render_dialogue(turns: &[ChatTurn]) -> String {
    turns
        .iter()
        .filter_map(|t| match t.speaker {
            Speaker::Pear => Some(format!("PEAR: {}", t.text)),
            Speaker::User => Some(format!("User: {}", t.text)),
            Speaker::Agent => None,
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error("could not read the answers to: {}", unmapped.join(", "))]
    Extraction { unmapped: Vec<String> },
    #[error(transparent)]
    Oversize(#[from] OversizeError),
}

/// What every agent call needs.
#[derive(Clone, Copy)]
pub struct AgentContext<'a> {
    pub gateway: &'a Gateway,
    pub kb: &'a KnowledgeBase,
    pub rules: &'a RuleSet,
}

impl AgentContext<'_> {
    pub fn template(&self, name: &str) -> Result<&str, PromptError> {
        self.kb.prompt(name).ok_or_else(|| PromptError::Missing(name.to_string()))
    }

    /// Rendered system and user messages of template `name`.
    pub fn messages(&self, name: &str, slots: &[(&str, &str)]) -> Result<Vec<ChatMessage>, PromptError> {
        let (system, user) = prompt::render_prompt(name, self.template(name)?, slots)?;
        Ok(vec![ChatMessage::system(system), ChatMessage::user(user)])
    }

    pub fn structured(&self, name: &str, slots: &[(&str, &str)], schema: &Schema) -> Result<Structured, AgentError> {
        let req = self.gateway.request(self.messages(name, slots)?);
        Ok(self.gateway.complete_structured(&req, schema, self.gateway.max_retries)?)
    }

    pub fn free_text(&self, name: &str, slots: &[(&str, &str)]) -> Result<String, AgentError> {
        let req = self.gateway.request(self.messages(name, slots)?);
        Ok(self.gateway.complete(&req)?.content)
    }
}

/// Placeholder for empty prompt sections.
pub(crate) fn or_none(s: &str) -> &str {
    if s.trim().is_empty() {
        "(none)"
    } else {
        s
    }
}

#[cfg(test)]
pub(crate) mod testing {
    use std::sync::Arc;

    use crate::kb::KnowledgeBase;
    use crate::llm::{Gateway, ScriptedProvider};
    use crate::rulebook::RuleSet;

    pub struct Fixture {
        pub gateway: Gateway,
        pub kb: KnowledgeBase,
        pub rules: RuleSet,
    }

    impl Fixture {
        pub fn with_provider(p: ScriptedProvider) -> Self {
            Self {
                gateway: Gateway::new(Arc::new(p), "reference"),
                kb: KnowledgeBase::demo(),
                rules: RuleSet::default_rules(),
            }
        }

        pub fn reference() -> Self {
            Self::with_provider(ScriptedProvider::reference())
        }

        pub fn ctx(&self) -> super::AgentContext<'_> {
            super::AgentContext {
                gateway: &self.gateway,
                kb: &self.kb,
                rules: &self.rules,
            }
        }
    }
}
