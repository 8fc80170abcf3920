//! A deterministic model that answers the bundled prompts faithfully.
//!
//! It recognises the agent from the system prompt, reads the `###` sections
//! of the first user message and computes what a careful model would reply,
//! using the same answer-reading helpers, rule engine and template renderer
//! as the rest of the crate. It stands in for a remote model in tests, in the
//! evaluation harness and in offline sessions.

use serde_json::{json, Map, Value};

use super::{ChatProvider, ChatRequest, ChatResponse, ContentPart, LlmError, Role};
use crate::agents::prompt::{parse_sections, role_in_system_prompt};
use crate::agents::questions::{
    answer_numbers, apply_answer, find_path, product_pairs, question_for_keys, question_schema, yes_no, PartialFacts,
    CANONICAL,
};
use crate::executor::mock::decode_flags_png;
use crate::executor::template::render_script;
use crate::params::{format_real, parse_params, Field, FieldKind, FieldValue, ReconstructionParams};
use crate::rulebook::{ExperimentFacts, IssueTag, QualityReport, RuleSet};

#[derive(Debug, Clone, Copy, Default)]
pub struct ReferenceModel;

fn refuse(msg: impl Into<String>) -> LlmError {
    LlmError::Provider {
        status: None,
        body: msg.into(),
    }
}

fn first_user_text(req: &ChatRequest) -> String {
    req.messages
        .iter()
        .find(|m| m.role == Role::User)
        .map(|m| m.text_content())
        .unwrap_or_default()
}

impl ChatProvider for ReferenceModel {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let system = request.system_text();
        let role = role_in_system_prompt(&system).ok_or_else(|| refuse("reference model: no agent role in the system prompt"))?;
        let sections = parse_sections(&first_user_text(request));
        let get = |name: &str| sections.get(name).map(String::as_str).unwrap_or("");
        let content = match role {
            "ParamsCollector" => collect(get("Fields"), get("Answer"))?,
            "ConversationSummarizer" => summarize(get("Extracted values"))?,
            "ParamsRecommender" => recommend_initial(get("Rules"), get("Facts"), get("Current parameters"))?,
            "UpdatesRecommender" => recommend_updates(get("Rules"), get("Quality report"), get("Current parameters"))?,
            "ParamsConfirmer" => confirm(get("Current parameters"), get("Request"))?,
            "QualityCollector" => quality_from_conversation(get("Conversation")).to_string(),
            "QualityAssessor" => assess(request)?,
            "ReconstructionScript" => single_agent(get("Conversation"), get("Rules"), get("Settings"), get("Template"))?,
            other => return Err(refuse(format!("reference model: unknown agent `{other}`"))),
        };
        Ok(ChatResponse::local(request, content))
    }
}

// ---------------------------------------------------------------------------
// Collector

/// Field names listed as `- name: type` lines.
fn listed_keys(fields: &str) -> Vec<String> {
    fields
        .lines()
        .filter_map(|l| l.trim().strip_prefix("- "))
        .filter_map(|l| l.split(':').next())
        .map(|k| k.trim().to_string())
        .collect()
}

fn num(v: f64, kind_int: bool) -> Value {
    if kind_int && v.fract() == 0.0 && v >= 0.0 {
        json!(v as u64)
    } else {
        json!(v)
    }
}

/// What a careful reader takes from `answer` for question `id`.
pub fn read_answer(id: &str, answer: &str) -> Map<String, Value> {
    let mut m = Map::new();
    let numbers = answer_numbers(answer);
    let first = numbers.first().copied();
    let schema = question_schema(id);
    let single = |m: &mut Map<String, Value>| {
        if let (Some(s), Some(v)) = (&schema, first) {
            let key = &s.keys[0];
            m.insert(key.name.clone(), num(v, key.ty == super::SchemaType::Int));
        }
    };
    match id {
        "scan_number" | "beam_energy" | "radius_bright_field" | "convergence_angle" | "detector_size" | "probe_modes" | "gpu"
        | "thickness" => single(&mut m),
        "initial_object" => match find_path(answer) {
            Some(p) => {
                m.insert("use_external_object".into(), json!(true));
                m.insert("initial_object_path".into(), json!(p));
            }
            None => {
                m.insert("use_external_object".into(), json!(false));
            }
        },
        "initial_probe" => match find_path(answer) {
            Some(p) => {
                m.insert("use_external_probe".into(), json!(true));
                m.insert("initial_probe_file".into(), json!(p));
                m.insert("defocus".into(), json!(0));
            }
            None => {
                m.insert("use_external_probe".into(), json!(false));
                m.insert("defocus".into(), json!(first.unwrap_or(0.0)));
            }
        },
        "probe_accuracy" | "drift" => {
            if let Some(b) = yes_no(answer) {
                let key = if id == "drift" { "sample_drifted" } else { "initial_probe_accurate" };
                m.insert(key.into(), json!(b));
            }
        }
        "scan_positions" => {
            let pairs = product_pairs(answer);
            match (find_path(answer), pairs.first()) {
                (Some(p), None) => {
                    m.insert("grid_scan_positions".into(), json!(false));
                    m.insert("use_external_positions".into(), json!(true));
                    m.insert("initial_position_file".into(), json!(p));
                }
                (_, pair) => {
                    m.insert("grid_scan_positions".into(), json!(true));
                    let mut rest = numbers.clone();
                    if let Some(&(x, y)) = pair {
                        m.insert("number_scan_points_x".into(), num(x, true));
                        m.insert("number_scan_points_y".into(), num(y, true));
                        for v in [x, y] {
                            if let Some(i) = rest.iter().position(|r| *r == v) {
                                rest.remove(i);
                            }
                        }
                    }
                    if let Some(&step) = rest.first() {
                        m.insert("scan_step_size_x".into(), json!(step));
                        m.insert("scan_step_size_y".into(), json!(rest.get(1).copied().unwrap_or(step)));
                    }
                }
            }
        }
        "total_patterns" => {
            if let Some(&(a, b)) = product_pairs(answer).first() {
                m.insert("total_patterns".into(), num(a * b, true));
            } else {
                single(&mut m);
            }
        }
        _ => {}
    }
    m
}

fn collect(fields: &str, answer: &str) -> Result<String, LlmError> {
    let keys = listed_keys(fields);
    let id = question_for_keys(&keys).ok_or_else(|| refuse(format!("reference model: unknown field list {keys:?}")))?;
    Ok(Value::Object(read_answer(id, answer)).to_string())
}

// ---------------------------------------------------------------------------
// Summarizer

fn number_word(n: u64) -> String {
    const WORDS: [&str; 13] = [
        "Zero", "One", "Two", "Three", "Four", "Five", "Six", "Seven", "Eight", "Nine", "Ten", "Eleven", "Twelve",
    ];
    WORDS.get(n as usize).map_or_else(|| n.to_string(), |w| w.to_string())
}

fn sentence(text: &str) -> String {
    let t = text.trim().trim_end_matches(['.', '!']);
    let mut chars = t.chars();
    match chars.next() {
        Some(c) => format!("{}{}.", c.to_uppercase(), chars.as_str()),
        None => String::new(),
    }
}

fn fmt_num(v: &Value) -> String {
    match v {
        Value::Number(n) if n.is_f64() => format_real(n.as_f64().unwrap_or(0.0)),
        other => other.to_string(),
    }
}

fn answer_bullet(id: &str, answer: &str, v: &Map<String, Value>) -> Option<String> {
    let n = |k: &str| v.get(k).map(fmt_num).unwrap_or_default();
    let b = |k: &str| v.get(k).and_then(Value::as_bool);
    let s = |k: &str| v.get(k).and_then(Value::as_str).unwrap_or("").to_string();
    Some(match id {
        "scan_number" => format!("The scan number is {}.", n("scan_number")),
        "beam_energy" => format!("The beam energy is {} keV.", n("beam_energy")),
        "radius_bright_field" => format!("The radius of the bright field disk is {} pixels.", n("radius_bright_field")),
        "convergence_angle" => format!("The convergence angle is {} mrad.", n("convergence_angle")),
        "detector_size" => format!("The detector size is {} pixels.", n("size_of_diffraction_patterns")),
        "initial_object" => match b("use_external_object")? {
            true => format!("The initial object will be loaded from {}.", s("initial_object_path")),
            false => "The initial object will not be loaded from an existing reconstruction.".into(),
        },
        "initial_probe" => match b("use_external_probe")? {
            true => "An existing probe will be loaded from the path provided.".into(),
            false => format!(
                "The initial probe will be generated from the ideal model with a defocus of {} angstrom.",
                n("defocus")
            ),
        },
        "probe_accuracy" => match b("initial_probe_accurate")? {
            true => "The initial probe is accurate and similar in size to the real probe.".into(),
            false => "The initial probe is not accurate.".into(),
        },
        "scan_positions" => match b("grid_scan_positions")? {
            true => format!(
                "The scan positions will be generated assuming a perfect grid with a step size of {} angstrom and {} x {} scan points.",
                n("scan_step_size_x"),
                n("number_scan_points_x"),
                n("number_scan_points_y")
            ),
            false => format!("The scan positions will be loaded from {}.", s("initial_position_file")),
        },
        "probe_modes" => {
            let k = v.get("number_of_probe_modes")?.as_u64()?;
            if k == 1 {
                "One mixed-state probe mode will be used.".into()
            } else {
                format!("{} mixed-state probe modes will be used.", number_word(k))
            }
        }
        "gpu" => format!("GPU {} will be used for reconstruction.", n("gpu_id")),
        "total_patterns" => match product_pairs(answer).first() {
            Some((a, b)) => format!(
                "The total number of diffraction patterns for the scan is {} x {}.",
                format_real(*a),
                format_real(*b)
            ),
            None => format!("The total number of diffraction patterns for the scan is {}.", n("total_patterns")),
        },
        "drift" => match b("sample_drifted")? {
            true => "The sample drifted during the scan.".into(),
            false => "The sample did not drift during the scan.".into(),
        },
        "thickness" => format!("The estimated sample thickness is {} angstrom.", n("sample_thickness")),
        _ => format!("{} {}", answer_subject(id), sentence(answer)),
    })
}

fn answer_subject(id: &str) -> String {
    format!("Regarding {}:", id.replace('_', " "))
}

fn report_bullets(r: &QualityReport) -> Vec<String> {
    let mut out = vec![
        if r.converged {
            "The reconstruction converged successfully."
        } else {
            "The reconstruction did not converge."
        }
        .to_string(),
        if r.grid_artifacts {
            "There are grid artifacts present in the object."
        } else {
            "There are no grid artifacts present in the object."
        }
        .to_string(),
        if r.initial_probe_accurate {
            "The initial probe is accurate enough."
        } else {
            "The initial probe is not accurate enough."
        }
        .to_string(),
        if r.last_probe_mode_structures {
            "Structures are visible in the last probe mode."
        } else {
            "There are no visible structures in the last probe mode."
        }
        .to_string(),
    ];
    let raw = r.raw_text.trim();
    if r.free_text_issues.iter().all(|t| *t == IssueTag::None) && (raw.is_empty() || yes_no(raw) == Some(false)) {
        out.push("There is nothing else to report about the results.".into());
    } else {
        out.push(sentence(raw));
    }
    out
}

fn summarize(extracted: &str) -> Result<String, LlmError> {
    let items: Vec<Value> = serde_json::from_str(extracted).map_err(|e| refuse(format!("reference model: extracted values: {e}")))?;
    let mut bullets = Vec::new();
    for item in &items {
        let id = item.get("id").and_then(Value::as_str).unwrap_or("");
        let answer = item.get("answer").and_then(Value::as_str).unwrap_or("");
        let values = item.get("values").cloned().unwrap_or(Value::Null);
        if id == "quality_report" {
            let report: QualityReport =
                serde_json::from_value(values).map_err(|e| refuse(format!("reference model: report: {e}")))?;
            bullets.extend(report_bullets(&report));
        } else if let Some(b) = values.as_object().and_then(|v| answer_bullet(id, answer, v)) {
            bullets.push(b);
        } else if !answer.trim().is_empty() {
            bullets.push(format!("{} {}", answer_subject(id), sentence(answer)));
        }
    }
    Ok(bullets.iter().map(|b| format!("- {b}")).collect::<Vec<_>>().join("\n"))
}

// ---------------------------------------------------------------------------
// Recommenders

fn changes_json(before: &ReconstructionParams, after: &ReconstructionParams) -> Map<String, Value> {
    let mut m = Map::new();
    for c in crate::params::diff(before, after).changes {
        m.insert(c.field.name().to_string(), serde_json::to_value(&c.new).unwrap_or(Value::Null));
    }
    m
}

fn parse_inputs(rules: &str, params: &str) -> Result<(RuleSet, ReconstructionParams), LlmError> {
    let rules = RuleSet::parse(rules).map_err(|e| refuse(format!("reference model: rules: {e}")))?;
    let params = parse_params(params).map_err(|e| refuse(format!("reference model: parameters: {e}")))?;
    Ok((rules, params))
}

fn recommend_initial(rules: &str, facts: &str, params: &str) -> Result<String, LlmError> {
    let (rules, params) = parse_inputs(rules, params)?;
    let facts: ExperimentFacts = serde_json::from_str(facts).map_err(|e| refuse(format!("reference model: facts: {e}")))?;
    let rec = rules.recommend_initial(&facts, &params);
    let explanation = rec
        .explanations
        .iter()
        .enumerate()
        .map(|(i, e)| format!("{}. {}", i + 1, e.text))
        .collect::<Vec<_>>()
        .join("\n\n");
    Ok(json!({"explanation": explanation, "changes": changes_json(&params, &rec.params)}).to_string())
}

fn recommend_updates(rules: &str, report: &str, params: &str) -> Result<String, LlmError> {
    let (rules, params) = parse_inputs(rules, params)?;
    let report: QualityReport = serde_json::from_str(report).map_err(|e| refuse(format!("reference model: report: {e}")))?;
    let rec = rules.recommend_updates(&report, &params);
    let explanation = if rec.explanations.is_empty() {
        "* No changes are needed.".to_string()
    } else {
        rec.explanations
            .iter()
            .map(|e| format!("* {}", e.text))
            .collect::<Vec<_>>()
            .join("\n")
    };
    Ok(json!({"explanation": explanation, "changes": changes_json(&params, &rec.params)}).to_string())
}

// ---------------------------------------------------------------------------
// Confirmer

fn words(s: &str) -> Vec<String> {
    s.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty() && !matches!(*w, "the" | "of" | "a" | "an"))
        .map(|w| w.strip_suffix('s').filter(|x| x.len() > 2).unwrap_or(w).to_string())
        .collect()
}

/// The field a phrase such as "update batch size" names.
pub fn field_for_phrase(phrase: &str) -> Option<Field> {
    let direct = phrase.trim().to_lowercase().replace([' ', '-'], "_");
    if let Some(f) = Field::from_name(&direct) {
        return Some(f);
    }
    let want = words(phrase);
    if want.is_empty() {
        return None;
    }
    let hits: Vec<Field> = Field::ALL
        .into_iter()
        .filter(|f| {
            let have = words(f.name());
            want.iter().all(|w| have.contains(w))
        })
        .collect();
    match hits.as_slice() {
        [one] => Some(*one),
        _ => None,
    }
}

fn parse_value(kind: FieldKind, raw: &str) -> Option<FieldValue> {
    let raw = raw.trim().trim_end_matches(['.', '!']).trim();
    match kind {
        FieldKind::Bool => yes_no(raw).map(FieldValue::Bool),
        FieldKind::Int => raw.parse::<u64>().ok().map(FieldValue::Int),
        FieldKind::Real => raw.parse::<f64>().ok().filter(|v| v.is_finite()).map(FieldValue::Real),
        FieldKind::Text => Some(FieldValue::Text(raw.trim_matches(['"', '\'']).to_string())),
    }
}

/// Edits in a request such as "set the update batch size to 256".
pub fn parse_edit_request(request: &str) -> Vec<(Field, FieldValue)> {
    let re = regex::Regex::new(r"(?i)(?:set|change|make)\s+(?:the\s+)?(.+?)\s+to\s+(\S+)").expect("edit pattern");
    let mut out: Vec<(Field, FieldValue)> = Vec::new();
    for part in request.split([';', '\n']).flat_map(|p| p.split(" and ")).flat_map(|p| p.split(", ")) {
        let Some(c) = re.captures(part.trim()) else { continue };
        let Some(field) = field_for_phrase(&c[1]) else { continue };
        let Some(value) = parse_value(field.kind(), &c[2]) else { continue };
        out.retain(|(f, _)| *f != field);
        out.push((field, value));
    }
    out
}

fn confirm(params: &str, request: &str) -> Result<String, LlmError> {
    let params = parse_params(params).map_err(|e| refuse(format!("reference model: parameters: {e}")))?;
    let mut changes = Map::new();
    for (field, value) in parse_edit_request(request) {
        if params.get(field) != value {
            changes.insert(field.name().into(), serde_json::to_value(&value).unwrap_or(Value::Null));
        }
    }
    Ok(json!({ "changes": changes }).to_string())
}

// ---------------------------------------------------------------------------
// Quality

/// `(question, answer)` pairs from `PEAR: ...` / `User: ...` lines.
pub fn dialogue_pairs(conversation: &str) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let mut question: Option<String> = None;
    for line in conversation.lines() {
        if let Some(q) = line.strip_prefix("PEAR: ") {
            question = Some(q.to_string());
        } else if let Some(a) = line.strip_prefix("User: ") {
            if let Some(q) = question.take() {
                out.push((q, a.to_string()));
            }
        }
    }
    out
}

/// Issue tags a free-text remark describes.
pub fn classify_issues(text: &str) -> Vec<IssueTag> {
    let t = text.to_lowercase();
    let mut tags = Vec::new();
    if t.contains("random feature") || t.contains("not real") || (t.contains("layer") && t.contains("random")) {
        tags.push(IssueTag::PerLayerRandomFeatures);
    }
    if t.contains("blur") {
        tags.push(IssueTag::AtomsBlurred);
    }
    if tags.is_empty() {
        tags.push(IssueTag::None);
    }
    tags
}

fn report_json(r: &QualityReport) -> Value {
    json!({
        "converged": r.converged,
        "grid_artifacts": r.grid_artifacts,
        "initial_probe_accurate": r.initial_probe_accurate,
        "last_probe_mode_structures": r.last_probe_mode_structures,
        "issues": r.free_text_issues.iter().map(|t| t.as_str()).collect::<Vec<_>>(),
    })
}

fn quality_from_conversation(conversation: &str) -> Value {
    let mut r = QualityReport::clean();
    for (q, a) in dialogue_pairs(conversation) {
        let q = q.to_lowercase();
        let yn = yes_no(&a);
        if q.contains("converge") {
            r.converged = yn.unwrap_or(true);
        } else if q.contains("grid artifact") {
            r.grid_artifacts = yn.unwrap_or(false);
        } else if q.contains("initial probe") {
            r.initial_probe_accurate = yn.unwrap_or(true);
        } else if q.contains("last probe mode") {
            r.last_probe_mode_structures = yn.unwrap_or(false);
        } else if q.contains("anything else") {
            r.free_text_issues = classify_issues(&a);
        }
    }
    report_json(&r)
}

fn assess(request: &ChatRequest) -> Result<String, LlmError> {
    let image = request
        .messages
        .iter()
        .rev()
        .flat_map(|m| m.parts.iter())
        .find_map(|p| match p {
            ContentPart::Image { data_base64, .. } => Some(data_base64.as_str()),
            _ => None,
        })
        .ok_or_else(|| refuse("reference model: no image to assess"))?;
    let bytes = { use base64::Engine; base64::engine::general_purpose::STANDARD.decode(image).ok() }.ok_or_else(|| refuse("reference model: image is not base64"))?;
    let flags = decode_flags_png(&bytes).ok_or_else(|| refuse("reference model: cannot read this image"))?;
    Ok(report_json(&flags.to_report()).to_string())
}

// ---------------------------------------------------------------------------
// Single agent

fn canonical_id(question: &str) -> Option<&'static str> {
    CANONICAL.iter().find(|(_, t)| t.trim() == question.trim()).map(|(id, _)| *id)
}

fn single_agent(conversation: &str, rules: &str, settings: &str, template: &str) -> Result<String, LlmError> {
    let rules = RuleSet::parse(rules).map_err(|e| refuse(format!("reference model: rules: {e}")))?;
    let mut params = ReconstructionParams::default();
    for line in settings.lines() {
        if let Some(dir) = line.trim().strip_prefix("data_directory = ") {
            params.data_directory = dir.trim().trim_matches('"').to_string();
        }
    }
    let mut facts = PartialFacts::default();
    for (q, a) in dialogue_pairs(conversation) {
        if let Some(id) = canonical_id(&q) {
            apply_answer(id, &read_answer(id, &a), &mut params, &mut facts);
        }
    }
    let facts = facts
        .complete()
        .ok_or_else(|| refuse(format!("reference model: missing facts {:?}", facts.missing())))?;
    let rec = rules.recommend_initial(&facts, &params);
    // sections arrive trimmed
    let template = format!("{}\n", template.trim_end());
    let script = render_script(&rec.params, &template).map_err(|e| refuse(format!("reference model: template: {e}")))?;
    Ok(json!({ "script": script }).to_string())
}
