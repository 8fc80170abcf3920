//! Parameter recommendations, checked against the rulebook.
//!
//! The model proposes changes; the rules decide. On every field a rule set,
//! the rule's value wins and any disagreement is reported. Changes to fields
//! no rule touched are kept when they pass validation, and reported too.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{or_none, AgentContext, AgentError};
use crate::llm::{Schema, SchemaType};
use crate::params::{to_canonical_text, validate, Field, FieldValue, ReconstructionParams};
use crate::rulebook::{ExperimentFacts, Phase, QualityReport, Recommendation};

pub const REFERENCE_CHUNKS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Note {
    /// The model's value for a rule-set field was replaced.
    Corrected {
        field: Field,
        proposed: Option<FieldValue>,
        rule: FieldValue,
    },
    /// A change to a field no rule set.
    Unruled { field: Field, value: FieldValue },
    /// A proposed change that was dropped.
    Ignored { key: String, reason: String },
}

impl std::fmt::Display for Note {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Note::Corrected {
                field,
                proposed: Some(p),
                rule,
            } => write!(
                f,
                "{field} was set to {} instead of the proposed {} to follow the rules",
                rule.to_json_literal(),
                p.to_json_literal()
            ),
            Note::Corrected { field, rule, .. } => {
                write!(f, "{field} was set to {} as the rules require", rule.to_json_literal())
            }
            Note::Unruled { field, value } => {
                write!(f, "{field} = {} was suggested without a matching rule", value.to_json_literal())
            }
            Note::Ignored { key, reason } => write!(f, "the proposed change to {key} was ignored: {reason}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecommendOutcome {
    pub params: ReconstructionParams,
    pub explanation: String,
    pub notes: Vec<Note>,
    /// The model's reply could not be used and the rules alone decided.
    pub fallback: bool,
}

fn schema(name: &str) -> Schema {
    Schema::new(name)
        .required("explanation", SchemaType::Text)
        .required("changes", SchemaType::Object)
}

/// Applies the model's proposed changes to `params` and reconciles them with
/// the rules' recommendation.
pub fn reconcile(params: &ReconstructionParams, changes: &Map<String, Value>, oracle: &Recommendation) -> (ReconstructionParams, Vec<Note>) {
    let mut out = params.clone();
    let mut notes = Vec::new();
    let mut proposed: Vec<(Field, FieldValue)> = Vec::new();
    for (key, raw) in changes {
        let Some(field) = Field::from_name(key) else {
            notes.push(Note::Ignored {
                key: key.clone(),
                reason: "unknown parameter".into(),
            });
            continue;
        };
        let Some(value) = FieldValue::from_json(field.kind(), raw) else {
            notes.push(Note::Ignored {
                key: key.clone(),
                reason: format!("{raw} is not a valid {:?} value", field.kind()).to_lowercase(),
            });
            continue;
        };
        proposed.push((field, value));
    }
    let fired = oracle.fired_fields();
    for (field, value) in &proposed {
        if !fired.contains(field) {
            out.set(*field, value.clone()).expect("value matches kind");
        }
    }
    for field in &fired {
        let rule = oracle.params.get(*field);
        let mine = proposed.iter().find(|(f, _)| f == field).map(|(_, v)| v.clone());
        let agrees = match &mine {
            Some(v) => *v == rule,
            None => params.get(*field) == rule,
        };
        if !agrees {
            notes.push(Note::Corrected {
                field: *field,
                proposed: mine,
                rule: rule.clone(),
            });
        }
        out.set(*field, rule).expect("value matches kind");
    }
    // unruled changes must not break validation
    let bad: Vec<Field> = validate(&out)
        .error_fields()
        .into_iter()
        .filter_map(Field::from_name)
        .filter(|f| !fired.contains(f) && proposed.iter().any(|(p, _)| p == f))
        .collect();
    for (field, value) in &proposed {
        if fired.contains(field) {
            continue;
        }
        if bad.contains(field) {
            out.set(*field, params.get(*field)).expect("value matches kind");
            notes.push(Note::Ignored {
                key: field.name().into(),
                reason: "the value fails validation".into(),
            });
        } else if params.get(*field) != *value {
            notes.push(Note::Unruled {
                field: *field,
                value: value.clone(),
            });
        }
    }
    (out, notes)
}

fn explain_with_notes(explanation: &str, notes: &[Note]) -> String {
    if notes.is_empty() {
        return explanation.to_string();
    }
    let mut out = explanation.trim_end().to_string();
    out.push_str("\n\nAdjustments:");
    for n in notes {
        out.push_str(&format!("\n* {n}"));
    }
    out
}

fn rules_only(oracle: &Recommendation, numbered: bool) -> String {
    let mut lines: Vec<String> = oracle
        .explanations
        .iter()
        .enumerate()
        .map(|(i, e)| if numbered { format!("{}. {}", i + 1, e.text) } else { format!("* {}", e.text) })
        .collect();
    if lines.is_empty() {
        lines.push("* No changes are needed.".into());
    }
    lines.push("(The model's reply could not be used; these recommendations come from the rules alone.)".into());
    lines.join(if numbered { "\n\n" } else { "\n" })
}

fn run(
    ctx: &AgentContext<'_>,
    template: &str,
    slots: &[(&str, &str)],
    params: &ReconstructionParams,
    oracle: Recommendation,
    numbered: bool,
) -> Result<RecommendOutcome, AgentError> {
    match ctx.structured(template, slots, &schema(template)) {
        Ok(s) => {
            let explanation = s.value["explanation"].as_str().unwrap_or_default().to_string();
            let changes = s.value["changes"].as_object().cloned().unwrap_or_default();
            let (params, notes) = reconcile(params, &changes, &oracle);
            Ok(RecommendOutcome {
                explanation: explain_with_notes(&explanation, &notes),
                params,
                notes,
                fallback: false,
            })
        }
        Err(AgentError::Llm(e)) => {
            tracing::warn!(error = %e, "recommender fell back to the rules");
            Ok(RecommendOutcome {
                explanation: rules_only(&oracle, numbered),
                params: oracle.params,
                notes: Vec::new(),
                fallback: true,
            })
        }
        Err(e) => Err(e),
    }
}

/// Initial recommendations from the collected facts.
pub fn recommend_initial(
    ctx: &AgentContext<'_>,
    summary: &str,
    facts: &ExperimentFacts,
    params: &ReconstructionParams,
) -> Result<RecommendOutcome, AgentError> {
    let oracle = ctx.rules.recommend_initial(facts, params);
    let rules = ctx.rules.describe(Phase::Initial);
    let facts_json = serde_json::to_string_pretty(facts).expect("facts serialize");
    let current = to_canonical_text(params);
    let references = ctx.kb.retrieved_context(summary, REFERENCE_CHUNKS);
    let slots = [
        ("rules", rules.as_str()),
        ("summary", or_none(summary)),
        ("facts", facts_json.as_str()),
        ("params", current.as_str()),
        ("references", or_none(&references)),
    ];
    run(ctx, "params_recommender", &slots, params, oracle, true)
}

/// Updates after a reconstruction from the quality report.
pub fn recommend_updates(
    ctx: &AgentContext<'_>,
    summary: &str,
    report: &QualityReport,
    params: &ReconstructionParams,
) -> Result<RecommendOutcome, AgentError> {
    let oracle = ctx.rules.recommend_updates(report, params);
    let rules = ctx.rules.describe(Phase::Update);
    let report_json = serde_json::to_string_pretty(report).expect("report serializes");
    let current = to_canonical_text(params);
    let references = ctx.kb.retrieved_context(summary, REFERENCE_CHUNKS);
    let slots = [
        ("rules", rules.as_str()),
        ("summary", or_none(summary)),
        ("report", report_json.as_str()),
        ("params", current.as_str()),
        ("references", or_none(&references)),
    ];
    run(ctx, "updates_recommender", &slots, params, oracle, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::testing::Fixture;
    use crate::llm::{FaultConfig, FaultKind, Matcher, ScriptedProvider};
    use crate::params::parse_params;
    use crate::rulebook::IssueTag;

    fn case_facts() -> ExperimentFacts {
        ExperimentFacts {
            total_patterns: 16384,
            beam_energy: 300.0,
            initial_probe_accurate: true,
            sample_drifted: false,
            sample_thickness: 100.0,
        }
    }

    fn recon_1() -> ReconstructionParams {
        parse_params(include_str!("../../tests/fixtures/recon_1.json")).unwrap()
    }

    fn collected() -> ReconstructionParams {
        let mut p = recon_1();
        p.number_of_iterations = 1;
        p.update_batch_size = 1;
        p.multislice_ptycho = false;
        p.number_of_layers = 1;
        p.diff_pattern_blur = 0.0;
        p
    }

    #[test]
    fn faithful_model_matches_the_rules() {
        let f = Fixture::reference();
        let out = recommend_initial(&f.ctx(), "", &case_facts(), &collected()).unwrap();
        assert_eq!(out.params, recon_1());
        assert!(out.notes.is_empty() && !out.fallback, "{:?} {}", out.notes, out.explanation);
        assert!(out.explanation.starts_with("1. Set the update batch size"));
    }

    #[test]
    fn wrong_batch_size_is_corrected() {
        let p = ScriptedProvider::new(vec![(
            Matcher::System("ParamsRecommender".into()),
            r#"{"explanation": "guess", "changes": {"update_batch_size": 999, "number_of_iterations": 50,
                "diff_pattern_blur": 1, "position_correction": false, "multislice_ptycho": true, "number_of_layers": 10}}"#
                .into(),
        )]);
        let f = Fixture::with_provider(p);
        let out = recommend_initial(&f.ctx(), "", &case_facts(), &collected()).unwrap();
        assert_eq!(out.params.update_batch_size, 128);
        assert_eq!(
            out.notes,
            vec![Note::Corrected {
                field: Field::UpdateBatchSize,
                proposed: Some(FieldValue::Int(999)),
                rule: FieldValue::Int(128),
            }]
        );
        assert!(out.explanation.contains("update_batch_size was set to 128 instead of the proposed 999"));
    }

    #[test]
    fn gateway_failure_falls_back_to_rules() {
        let p = ScriptedProvider::reference().with_faults(FaultConfig {
            rate: 1.0,
            kinds: vec![FaultKind::MalformOutput],
            seed: 0,
        });
        let f = Fixture::with_provider(p);
        let out = recommend_initial(&f.ctx(), "", &case_facts(), &collected()).unwrap();
        assert!(out.fallback);
        assert_eq!(out.params, recon_1());
        assert!(out.explanation.contains("rules alone"));
    }

    #[test]
    fn update_examples() {
        let f = Fixture::reference();
        let mut report = QualityReport::clean();
        report.last_probe_mode_structures = true;
        let out = recommend_updates(&f.ctx(), "", &report, &recon_1()).unwrap();
        assert_eq!(out.params.number_of_probe_modes, 6);
        assert_eq!(out.explanation, "* Increase the number of probe modes by 3.");

        let out = recommend_updates(&f.ctx(), "", &QualityReport::clean(), &recon_1()).unwrap();
        assert_eq!(out.params, recon_1());

        let mut p = recon_1();
        p.diff_pattern_blur = 1.5;
        let mut report = QualityReport::clean();
        report.free_text_issues = vec![IssueTag::AtomsBlurred];
        let out = recommend_updates(&f.ctx(), "", &report, &p).unwrap();
        assert_eq!(out.params.diff_pattern_blur, 2.0);
    }

    #[test]
    fn unruled_changes_are_kept_and_flagged() {
        let p = ScriptedProvider::new(vec![(
            Matcher::System("UpdatesRecommender".into()),
            r#"{"explanation": "* blur", "changes": {"diff_pattern_blur": 2.0, "layer_regularization_coefficient": 7}}"#.into(),
        )]);
        let f = Fixture::with_provider(p);
        let out = recommend_updates(&f.ctx(), "", &QualityReport::clean(), &recon_1()).unwrap();
        assert_eq!(out.params.diff_pattern_blur, 2.0);
        assert_eq!(out.params.layer_regularization_coefficient, 0.0);
        assert_eq!(out.notes.len(), 2);
    }
}
