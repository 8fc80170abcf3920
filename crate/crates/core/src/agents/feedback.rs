//! Quality feedback after a reconstruction, from the user or from images.

use serde_json::{Map, Value};

use super::questions::yes_no;
use super::{AgentContext, AgentError, ChatTurn};
use crate::kb::images::ImagePayload;
use crate::llm::reference::classify_issues;
use crate::llm::{LlmError, Schema, SchemaType};
use crate::rulebook::{IssueTag, QualityReport};

pub const QUALITY_QUESTIONS: [&str; 5] = [
    "Did the reconstruction converge?",
    "Do you see any grid artifacts in the object?",
    "Is the initial probe accurate enough?",
    "Do you see any structures in the last probe mode?",
    "Is there anything else you want to tell me about the results?",
];

fn schema(name: &str) -> Schema {
    Schema::new(name)
        .required("converged", SchemaType::Bool)
        .required("grid_artifacts", SchemaType::Bool)
        .required("initial_probe_accurate", SchemaType::Bool)
        .required("last_probe_mode_structures", SchemaType::Bool)
        .required("issues", SchemaType::TextList)
}

fn report_from(v: &Map<String, Value>) -> QualityReport {
    let b = |k: &str, default: bool| v.get(k).and_then(Value::as_bool).unwrap_or(default);
    let mut r = QualityReport {
        converged: b("converged", true),
        grid_artifacts: b("grid_artifacts", false),
        initial_probe_accurate: b("initial_probe_accurate", true),
        last_probe_mode_structures: b("last_probe_mode_structures", false),
        free_text_issues: v
            .get("issues")
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(Value::as_str).filter_map(IssueTag::from_name).collect())
            .unwrap_or_default(),
        raw_text: String::new(),
    };
    r.normalize_tags();
    r
}

fn mechanical(answers: &[String; 5]) -> QualityReport {
    let mut r = QualityReport::clean();
    r.free_text_issues = classify_issues(&answers[4]);
    r
}

#[derive(Debug, Clone, PartialEq)]
pub struct QualityOutcome {
    pub report: QualityReport,
    /// The model's reply could not be used.
    pub fallback: bool,
}

/// The question/answer turns of one feedback round.
pub fn quality_dialogue(answers: &[String; 5]) -> Vec<ChatTurn> {
    QUALITY_QUESTIONS
        .iter()
        .zip(answers)
        .flat_map(|(q, a)| [ChatTurn::pear(*q), ChatTurn::user(a.clone())])
        .collect()
}

/// Turns the answers to [`QUALITY_QUESTIONS`] into a report. A plain yes or
/// no always decides its flag, whatever the model read.
pub fn interpret_quality(ctx: &AgentContext<'_>, answers: &[String; 5]) -> Result<QualityOutcome, AgentError> {
    let conversation = super::render_dialogue(&quality_dialogue(answers));
    let (mut report, fallback) = match ctx.structured("quality_collector", &[("conversation", conversation.as_str())], &schema("quality_collector")) {
        Ok(s) => (report_from(&s.value), false),
        Err(AgentError::Llm(e)) => {
            tracing::warn!(error = %e, "quality collector fell back to the plain answers");
            (mechanical(answers), true)
        }
        Err(e) => return Err(e),
    };
    let flags: [&mut bool; 4] = [
        &mut report.converged,
        &mut report.grid_artifacts,
        &mut report.initial_probe_accurate,
        &mut report.last_probe_mode_structures,
    ];
    for (flag, answer) in flags.into_iter().zip(answers) {
        if let Some(yes) = yes_no(answer) {
            *flag = yes;
        }
    }
    report.raw_text = answers[4].clone();
    Ok(QualityOutcome { report, fallback })
}

/// Assesses a reconstruction image against the knowledge base's annotated
/// examples. Fails with [`LlmError::VisionUnsupported`] for text-only models.
pub fn assess_quality_auto(ctx: &AgentContext<'_>, png: &[u8]) -> Result<QualityReport, AgentError> {
    if !ctx.gateway.supports_vision() {
        return Err(LlmError::VisionUnsupported {
            model: ctx.gateway.model.clone(),
        }
        .into());
    }
    let (system, instruction) = super::prompt::render_prompt("quality_assessor", ctx.template("quality_assessor")?, &[])?;
    let mut messages = vec![crate::llm::ChatMessage::system(system)];
    messages.extend(ctx.kb.fewshot_prompt(&ImagePayload::png(png), &instruction)?);
    let req = ctx.gateway.request(messages);
    let s = ctx.gateway.complete_structured(&req, &schema("quality_assessor"), ctx.gateway.max_retries)?;
    let mut report = report_from(&s.value);
    report.raw_text = "(assessed from the reconstruction image)".into();
    Ok(report)
}
