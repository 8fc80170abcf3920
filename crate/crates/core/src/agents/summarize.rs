//! Condensing the conversation so far into short bullet points.
//!
//! The summary feeds later prompts and the log. A reply that is not a bullet
//! list, or that states a number found nowhere in the source, is replaced by
//! a plain listing of the extracted values.

use serde_json::Value;

use super::collect::Extracted;
use super::questions::answer_numbers;
use super::{render_dialogue, AgentContext, AgentError, ChatTurn};
use crate::rulebook::QualityReport;

/// Id of the pseudo-answer that carries a quality report.
pub const REPORT_ID: &str = "quality_report";

/// Wraps a quality report so it can be summarised with the answers.
pub fn report_item(report: &QualityReport) -> Extracted {
    let values = match serde_json::to_value(report).expect("report serializes") {
        Value::Object(m) => m,
        _ => unreachable!("a report serializes to an object"),
    };
    Extracted {
        id: REPORT_ID.into(),
        answer: report.raw_text.clone(),
        values,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    /// Bullet lines, each starting with `- `.
    pub bullets: Vec<String>,
    pub fallback: bool,
}

impl Summary {
    pub fn text(&self) -> String {
        self.bullets.join("\n")
    }
}

fn bullets_of(reply: &str) -> Option<Vec<String>> {
    let lines: Vec<String> = reply
        .lines()
        .map(str::trim_end)
        .filter(|l| !l.trim().is_empty())
        .map(str::to_string)
        .collect();
    if lines.is_empty() || !lines.iter().all(|l| l.starts_with("- ")) {
        return None;
    }
    Some(lines)
}

fn grounded(bullets: &[String], items: &[Extracted]) -> bool {
    let source: Vec<f64> = items
        .iter()
        .flat_map(|e| {
            let mut n = answer_numbers(&e.answer);
            n.extend(answer_numbers(&Value::Object(e.values.clone()).to_string()));
            n
        })
        .collect();
    bullets
        .iter()
        .flat_map(|b| answer_numbers(b))
        .all(|x| source.iter().any(|s| (s - x).abs() <= 1e-9 * x.abs().max(1.0)))
}

fn plain(items: &[Extracted]) -> Vec<String> {
    let mut out = Vec::new();
    for e in items {
        if e.id == REPORT_ID {
            let r: QualityReport = match serde_json::from_value(Value::Object(e.values.clone())) {
                Ok(r) => r,
                Err(_) => continue,
            };
            let yn = |b: bool| if b { "yes" } else { "no" };
            out.push(format!("- Converged: {}.", yn(r.converged)));
            out.push(format!("- Grid artifacts: {}.", yn(r.grid_artifacts)));
            out.push(format!("- Initial probe accurate: {}.", yn(r.initial_probe_accurate)));
            out.push(format!("- Structures in the last probe mode: {}.", yn(r.last_probe_mode_structures)));
            let tags: Vec<&str> = r.free_text_issues.iter().map(|t| t.as_str()).collect();
            out.push(format!("- Other issues: {}.", tags.join(", ")));
        } else if e.values.is_empty() {
            if !e.answer.trim().is_empty() {
                out.push(format!("- {}: {}", e.id.replace('_', " "), e.answer.trim()));
            }
        } else {
            for (k, v) in &e.values {
                let v = match v {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                out.push(format!("- The {} is {v}.", k.replace('_', " ")));
            }
        }
    }
    out
}

/// Summarises `turns`, whose content was read into `items`.
pub fn summarize(ctx: &AgentContext<'_>, turns: &[ChatTurn], items: &[Extracted]) -> Result<Summary, AgentError> {
    if items.is_empty() {
        return Ok(Summary {
            bullets: Vec::new(),
            fallback: false,
        });
    }
    let conversation = render_dialogue(turns);
    let extracted = serde_json::to_string_pretty(items).expect("items serialize");
    let slots = [("conversation", conversation.as_str()), ("extracted", extracted.as_str())];
    let reply = match ctx.free_text("conversation_summarizer", &slots) {
        Ok(r) => Some(r),
        Err(AgentError::Llm(e)) => {
            tracing::warn!(error = %e, "summarizer failed");
            None
        }
        Err(e) => return Err(e),
    };
    match reply.as_deref().and_then(bullets_of).filter(|b| grounded(b, items)) {
        Some(bullets) => Ok(Summary { bullets, fallback: false }),
        None => Ok(Summary {
            bullets: plain(items),
            fallback: true,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::testing::Fixture;
    use crate::llm::{Matcher, ScriptedProvider};
    use serde_json::json;

    fn item(id: &str, answer: &str, values: Value) -> Extracted {
        Extracted {
            id: id.into(),
            answer: answer.into(),
            values: values.as_object().cloned().unwrap(),
        }
    }

    #[test]
    fn bullets_from_the_model() {
        let f = Fixture::reference();
        let items = vec![
            item("scan_number", "31", json!({"scan_number": 31})),
            item("probe_modes", "3", json!({"number_of_probe_modes": 3})),
        ];
        let s = summarize(&f.ctx(), &[], &items).unwrap();
        assert!(!s.fallback);
        assert_eq!(
            s.bullets,
            vec!["- The scan number is 31.", "- Three mixed-state probe modes will be used."]
        );
    }

    #[test]
    fn report_summary() {
        let f = Fixture::reference();
        let s = summarize(&f.ctx(), &[], &[report_item(&QualityReport::clean())]).unwrap();
        assert!(s.bullets.contains(&"- The reconstruction converged successfully.".to_string()));
    }

    #[test]
    fn nothing_to_summarise() {
        let f = Fixture::reference();
        assert!(summarize(&f.ctx(), &[], &[]).unwrap().bullets.is_empty());
    }

    #[test]
    fn unusable_replies_fall_back() {
        let items = vec![item("scan_number", "31", json!({"scan_number": 31}))];
        for reply in ["The scan number is 31.", "- The scan number is 32."] {
            let f = Fixture::with_provider(ScriptedProvider::new(vec![(Matcher::Any, reply.into())]));
            let s = summarize(&f.ctx(), &[], &items).unwrap();
            assert!(s.fallback, "{reply}");
            assert_eq!(s.bullets, vec!["- The scan number is 31."]);
        }
    }
}
