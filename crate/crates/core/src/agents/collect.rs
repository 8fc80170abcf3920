//! Turning the user's answers into parameter values.
//!
//! Every reply from the model is checked against the answer it came from
//! before it is used: numbers must occur in the answer (or be the product of
//! an `a x b` pair), paths must be quoted verbatim and companion fields must
//! be present. A reply that fails is re-read with a note, at most
//! [`MAX_REREADS`] times.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::questions::{
    answer_numbers, apply_answer, find_path, product_pairs, question_schema, yes_no, PartialFacts, Question,
};
use super::{AgentContext, AgentError};
use crate::llm::{LlmError, Schema, SchemaType};
use crate::params::ReconstructionParams;
use crate::rulebook::ExperimentFacts;

pub const MAX_REREADS: u32 = 2;

/// What was read from one answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extracted {
    pub id: String,
    pub answer: String,
    /// Empty for questions the collector does not interpret.
    pub values: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollectOutcome {
    pub params: ReconstructionParams,
    pub facts: ExperimentFacts,
    pub extracted: Vec<Extracted>,
    /// Ids of questions whose first reading was rejected.
    pub reread: Vec<String>,
}

fn field_lines(schema: &Schema) -> String {
    schema
        .keys
        .iter()
        .map(|k| {
            format!(
                "- {}: {} ({})",
                k.name,
                k.ty.describe(),
                if k.required { "required" } else { "optional" }
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// Checks a reading against the answer it came from.
pub fn ground(id: &str, answer: &str, v: &Map<String, Value>) -> Result<(), String> {
    let numbers = answer_numbers(answer);
    let pairs = product_pairs(answer);
    let path = find_path(answer);
    let b = |k: &str| v.get(k).and_then(Value::as_bool);
    let s = |k: &str| v.get(k).and_then(Value::as_str).unwrap_or("");
    let quoted = |k: &str| -> Result<(), String> {
        let p = s(k);
        if p.is_empty() {
            Err(format!("\"{k}\" is required here"))
        } else if !answer.contains(p) {
            Err(format!("\"{k}\" ({p}) does not appear in the answer"))
        } else {
            Ok(())
        }
    };

    for (k, val) in v {
        let Some(x) = val.as_f64() else { continue };
        if k == "defocus" && b("use_external_probe") == Some(true) {
            if x != 0.0 {
                return Err("\"defocus\" must be 0 when an existing probe is loaded".into());
            }
            continue;
        }
        if k == "defocus" && x == 0.0 && numbers.is_empty() {
            continue;
        }
        let stated = numbers.iter().any(|n| close(*n, x)) || pairs.iter().any(|(a, c)| close(a * c, x));
        if !stated {
            return Err(format!("\"{k}\" = {val} is not stated in the answer"));
        }
    }

    match id {
        "initial_object" => {
            if b("use_external_object") != Some(path.is_some()) {
                return Err("\"use_external_object\" does not match whether a path was given".into());
            }
            if path.is_some() {
                quoted("initial_object_path")?;
            }
        }
        "initial_probe" => {
            if b("use_external_probe") != Some(path.is_some()) {
                return Err("\"use_external_probe\" does not match whether a path was given".into());
            }
            if path.is_some() {
                quoted("initial_probe_file")?;
            } else if !numbers.is_empty() && !v.contains_key("defocus") {
                return Err("\"defocus\" is required for the ideal probe model".into());
            }
        }
        "scan_positions" => {
            if b("grid_scan_positions") == Some(true) {
                for k in ["scan_step_size_x", "number_scan_points_x"] {
                    if !v.contains_key(k) {
                        return Err(format!("\"{k}\" is required for a grid scan"));
                    }
                }
                if let Some(&(x, y)) = pairs.first() {
                    let px = v.get("number_scan_points_x").and_then(Value::as_f64);
                    let py = v.get("number_scan_points_y").and_then(Value::as_f64).or(px);
                    if px != Some(x) || py != Some(y) {
                        return Err(format!("the scan points must be {x} x {y}"));
                    }
                }
            } else {
                quoted("initial_position_file")?;
            }
        }
        "probe_accuracy" | "drift" => {
            let key = if id == "drift" { "sample_drifted" } else { "initial_probe_accurate" };
            if let (Some(said), Some(read)) = (yes_no(answer), b(key)) {
                if said != read {
                    return Err(format!("\"{key}\" contradicts the answer"));
                }
            }
        }
        _ => {}
    }
    Ok(())
}

/// Reads one answer, re-reading with a note when a reply fails the checks.
/// Returns the values and the number of readings used.
pub fn read_one(ctx: &AgentContext<'_>, q: &Question, answer: &str) -> Result<(Map<String, Value>, u32), AgentError> {
    let schema = question_schema(&q.id).expect("canonical question");
    let fields = field_lines(&schema);
    let mut note = String::from("(none)");
    for reading in 0..=MAX_REREADS {
        let slots = [
            ("question", q.text.as_str()),
            ("answer", answer),
            ("fields", fields.as_str()),
            ("notes", note.as_str()),
        ];
        let problem = match ctx.structured("params_collector", &slots, &schema) {
            Ok(s) => match ground(&q.id, answer, &s.value) {
                Ok(()) => return Ok((s.value, reading + 1)),
                Err(p) => p,
            },
            Err(AgentError::Llm(LlmError::StructuredOutput { last_problem, .. })) => last_problem,
            Err(e) => return Err(e),
        };
        tracing::debug!(question = %q.id, reading, %problem, "collector reply rejected");
        note = format!(
            "Reading {} of this answer. The previous reading was rejected: {problem}. Only report values the answer states.",
            reading + 2
        );
    }
    Err(AgentError::Extraction {
        unmapped: vec![q.id.clone()],
    })
}

/// Reads every answer into `base` and the experiment facts.
pub fn collect_parameters(
    ctx: &AgentContext<'_>,
    answers: &[(Question, String)],
    base: &ReconstructionParams,
) -> Result<CollectOutcome, AgentError> {
    let mut params = base.clone();
    let mut facts = PartialFacts::default();
    let mut extracted = Vec::new();
    let mut reread = Vec::new();
    let mut unmapped = Vec::new();
    for (q, answer) in answers {
        if !q.canonical() {
            extracted.push(Extracted {
                id: q.id.clone(),
                answer: answer.clone(),
                values: Map::new(),
            });
            continue;
        }
        match read_one(ctx, q, answer) {
            Ok((values, readings)) => {
                if readings > 1 {
                    reread.push(q.id.clone());
                }
                apply_answer(&q.id, &values, &mut params, &mut facts);
                extracted.push(Extracted {
                    id: q.id.clone(),
                    answer: answer.clone(),
                    values,
                });
            }
            Err(AgentError::Extraction { unmapped: u }) => unmapped.extend(u),
            Err(e) => return Err(e),
        }
    }
    if !unmapped.is_empty() {
        return Err(AgentError::Extraction { unmapped });
    }
    let facts = facts.complete().ok_or_else(|| AgentError::Extraction {
        unmapped: facts.missing().into_iter().map(String::from).collect(),
    })?;
    Ok(CollectOutcome {
        params,
        facts,
        extracted,
        reread,
    })
}

/// Schema type of a collected key, for callers that render values.
pub fn key_type(id: &str, key: &str) -> Option<SchemaType> {
    question_schema(id)?.key(key).map(|k| k.ty)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::agents::questions::{generate_questions, CANONICAL};
    use crate::agents::testing::Fixture;
    use crate::llm::{FaultConfig, FaultKind, Matcher, ScriptedProvider};
    use serde_json::json;

    pub const CASE_ANSWERS: [&str; 14] = [
        "31",
        "300",
        "23.25",
        "25",
        "128",
        "no",
        "load an existing probe from /Modified/to/Hide/User/Info/Niter1000.mat",
        "yes",
        "128 x 128, step size is 0.2546 A",
        "3",
        "1",
        "128 x 128",
        "no",
        "100",
    ];

    fn case_answers(f: &Fixture) -> Vec<(Question, String)> {
        generate_questions(&f.kb)
            .unwrap()
            .into_iter()
            .zip(CASE_ANSWERS)
            .map(|(q, a)| (q, a.to_string()))
            .collect()
    }

    fn base() -> ReconstructionParams {
        ReconstructionParams {
            data_directory: "/Modified/to/Hide/User/Info/".into(),
            ..Default::default()
        }
    }

    #[test]
    fn case_study_answers() {
        let f = Fixture::reference();
        let out = collect_parameters(&f.ctx(), &case_answers(&f), &base()).unwrap();
        let p = &out.params;
        assert_eq!(p.scan_number, 31);
        assert_eq!(p.beam_energy, 300.0);
        assert_eq!(p.radius_bright_field, 23.25);
        assert_eq!(p.convergence_angle, 25.0);
        assert_eq!(p.size_of_diffraction_patterns, 128);
        assert!(!p.use_external_object);
        assert!(p.use_external_probe);
        assert_eq!(p.initial_probe_file, "/Modified/to/Hide/User/Info/Niter1000.mat");
        assert_eq!(p.defocus, 0.0);
        assert!(p.grid_scan_positions && !p.use_external_positions);
        assert_eq!((p.scan_step_size_x, p.scan_step_size_y), (0.2546, 0.2546));
        assert_eq!((p.number_scan_points_x, p.number_scan_points_y), (128, 128));
        assert_eq!(p.number_of_probe_modes, 3);
        assert_eq!(p.gpu_id, 1);
        assert_eq!(p.object_thickness, 100.0);
        assert_eq!(
            out.facts,
            ExperimentFacts {
                total_patterns: 16384,
                beam_energy: 300.0,
                initial_probe_accurate: true,
                sample_drifted: false,
                sample_thickness: 100.0,
            }
        );
        assert!(out.reread.is_empty());
        assert_eq!(out.extracted.len(), 14);
    }

    #[test]
    fn canned_reading_of_words() {
        let p = ScriptedProvider::new(vec![(
            Matcher::AllOf(vec![Matcher::contains("about a hundred"), Matcher::contains("sample_thickness")]),
            "{\"sample_thickness\": 100}".into(),
        )])
        .with_fallback(std::sync::Arc::new(crate::llm::ReferenceModel));
        let f = Fixture::with_provider(p);
        let mut answers = case_answers(&f);
        answers[13].1 = "about a hundred".into();
        let out = collect_parameters(&f.ctx(), &answers, &base()).unwrap();
        assert_eq!(out.facts.sample_thickness, 100.0);
    }

    #[test]
    fn grounding_rules() {
        let v = |j: serde_json::Value| j.as_object().unwrap().clone();
        assert!(ground("scan_number", "31", &v(json!({"scan_number": 31}))).is_ok());
        assert!(ground("scan_number", "31", &v(json!({"scan_number": 32}))).is_err());
        assert!(ground("total_patterns", "128 x 128", &v(json!({"total_patterns": 16384}))).is_ok());
        assert!(ground("total_patterns", "128 x 128", &v(json!({"total_patterns": 16385}))).is_err());
        let pos = "128 x 64, step size is 0.2546 A";
        let good = json!({"grid_scan_positions": true, "number_scan_points_x": 128, "number_scan_points_y": 64, "scan_step_size_x": 0.2546});
        assert!(ground("scan_positions", pos, &v(good)).is_ok());
        let swapped = json!({"grid_scan_positions": true, "number_scan_points_x": 64, "number_scan_points_y": 128, "scan_step_size_x": 0.2546});
        assert!(ground("scan_positions", pos, &v(swapped)).is_err());
        let no_step = json!({"grid_scan_positions": true, "number_scan_points_x": 128, "number_scan_points_y": 64});
        assert!(ground("scan_positions", pos, &v(no_step)).is_err());
        let probe = "load an existing probe from /a/b.mat";
        assert!(ground("initial_probe", probe, &v(json!({"use_external_probe": true, "initial_probe_file": "/a/b.mat", "defocus": 0}))).is_ok());
        assert!(ground("initial_probe", probe, &v(json!({"use_external_probe": true, "initial_probe_file": "/a/b.mat", "defocus": 5}))).is_err());
        assert!(ground("initial_probe", probe, &v(json!({"use_external_probe": true}))).is_err());
        assert!(ground("initial_probe", "ideal model, defocus 50", &v(json!({"use_external_probe": false, "defocus": 50}))).is_ok());
        assert!(ground("drift", "no", &v(json!({"sample_drifted": true}))).is_err());
    }

    #[test]
    fn faults_are_caught_and_reread() {
        for kind in FaultKind::ALL {
            for seed in 0..5 {
                let p = ScriptedProvider::reference().with_faults(FaultConfig {
                    rate: 0.3,
                    kinds: vec![kind],
                    seed,
                });
                let f = Fixture::with_provider(p);
                let out = collect_parameters(&f.ctx(), &case_answers(&f), &base()).unwrap();
                let clean = collect_parameters(&Fixture::reference().ctx(), &case_answers(&f), &base()).unwrap();
                assert_eq!(out.params, clean.params, "{kind:?} seed {seed}");
                assert_eq!(out.facts, clean.facts);
            }
        }
    }

    #[test]
    fn every_question_is_answered() {
        assert_eq!(CASE_ANSWERS.len(), CANONICAL.len());
    }
}
