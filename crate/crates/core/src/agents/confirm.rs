//! Applying the user's edits to the proposed parameters.
//!
//! Numbers in the model's reading must occur in the request, so a reading
//! that invents a value is re-read with a note. Values that fail validation
//! are refused and reported back to the user.

use serde_json::{Map, Value};

use super::collect::MAX_REREADS;
use super::questions::answer_numbers;
use super::{AgentContext, AgentError};
use crate::llm::{LlmError, Schema, SchemaType};
use crate::params::{to_canonical_text, validate, Field, FieldValue, ReconstructionParams};

/// True when the reply approves the parameters as they are.
pub fn is_lgtm(reply: &str) -> bool {
    let t = reply.trim().trim_end_matches(['.', '!', ' ']).to_lowercase();
    matches!(t.as_str(), "lgtm" | "looks good to me" | "looks good")
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditOutcome {
    pub params: ReconstructionParams,
    pub applied: Vec<(Field, FieldValue)>,
    /// `(key, reason)` for each change that was not applied.
    pub refused: Vec<(String, String)>,
}

impl EditOutcome {
    /// A sentence for the user about refused changes, if any.
    pub fn refusal_message(&self) -> Option<String> {
        if self.refused.is_empty() {
            return None;
        }
        let parts: Vec<String> = self.refused.iter().map(|(k, r)| format!("{k} ({r})")).collect();
        Some(format!("I could not apply these changes: {}.", parts.join("; ")))
    }
}

fn schema() -> Schema {
    Schema::new("params_confirmer").required("changes", SchemaType::Object)
}

/// Reasons the reading of `request` cannot be trusted.
fn ground(request: &str, changes: &Map<String, Value>) -> Result<(), String> {
    let numbers = answer_numbers(request);
    for (k, v) in changes {
        let Some(x) = v.as_f64() else { continue };
        if !numbers.iter().any(|n| (n - x).abs() <= 1e-9 * x.abs().max(1.0)) {
            return Err(format!("{k} = {v} is not stated in the request"));
        }
    }
    Ok(())
}

/// Reads the change request and applies it to `params`.
pub fn interpret_edit(ctx: &AgentContext<'_>, params: &ReconstructionParams, request: &str) -> Result<EditOutcome, AgentError> {
    let current = to_canonical_text(params);
    let mut notes = String::from("(none)");
    let mut attempt = 0;
    let changes = loop {
        let slots = [("params", current.as_str()), ("request", request), ("notes", notes.as_str())];
        let reading = ctx.structured("params_confirmer", &slots, &schema())?;
        let changes = reading.value["changes"].as_object().cloned().unwrap_or_default();
        match ground(request, &changes) {
            Ok(()) => break changes,
            Err(problem) if attempt < MAX_REREADS => {
                attempt += 1;
                notes = format!("Reading {} of this request. The previous reading was rejected: {problem}.", attempt + 1);
            }
            Err(problem) => {
                return Err(AgentError::Llm(LlmError::StructuredOutput {
                    schema: "params_confirmer".into(),
                    attempts: Vec::new(),
                    last_problem: problem,
                }))
            }
        }
    };

    let mut out = EditOutcome {
        params: params.clone(),
        applied: Vec::new(),
        refused: Vec::new(),
    };
    for (key, raw) in &changes {
        let Some(field) = Field::from_name(key) else {
            out.refused.push((key.clone(), "unknown parameter".into()));
            continue;
        };
        let Some(value) = FieldValue::from_json(field.kind(), raw) else {
            out.refused.push((key.clone(), format!("{raw} has the wrong type")));
            continue;
        };
        let mut trial = out.params.clone();
        trial.set(field, value.clone()).expect("value matches kind");
        let report = validate(&trial);
        if let Some(issue) = report.errors().find(|i| i.field == field.name()) {
            out.refused.push((key.clone(), issue.message.clone()));
            continue;
        }
        out.params = trial;
        out.applied.push((field, value));
    }
    Ok(out)
}
