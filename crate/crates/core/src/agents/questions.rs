//! The collector's questions and what each answer fills in.

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::sync::OnceLock;

use crate::kb::{KbError, KnowledgeBase};
use crate::llm::{Schema, SchemaType};
use crate::params::ReconstructionParams;
use crate::rulebook::ExperimentFacts;

/// Built-in question ids and texts, in asking order.
pub const CANONICAL: [(&str, &str); 14] = [
    ("scan_number", "What is the scan number?"),
    ("beam_energy", "What is the beam energy (in keV)?"),
    ("radius_bright_field", "What is the radius of the bright field disk (in pixels)? "),
    ("convergence_angle", "What is the convergence angle (in mrad)?"),
    ("detector_size", "What is the detector size (in # of pixels)?"),
    (
        "initial_object",
        "Do you want to load the initial object from an existing reconstruction? If so, please provide the path to the reconstruction file.",
    ),
    (
        "initial_probe",
        "Do you want to generate the initial probe based on the ideal model or load it from an existing reconstruction? If use ideal model, please provide the value of defocus (in angstroms). If use existing probe, please provide the path to the reconstruction file.",
    ),
    ("probe_accuracy", "Is the initial probe accurate (similar size to the real probe)?"),
    (
        "scan_positions",
        "Do you want to generate scan positions assuming a perfect grid or load them from an existing reconstruction? If you want to generate scan positions, please provide the scan step size (in angstroms) and the number of scan points in both X and Y directions. If use existing reconstructions, please provide the path to the reconstruction file.",
    ),
    ("probe_modes", "How many mixed-state probe modes do you want to use?"),
    ("gpu", "Which GPU do you want to use for reconstruction?"),
    ("total_patterns", "How many diffraction patterns does the scan have in total?"),
    ("drift", "Did the sample drift during scan?"),
    ("thickness", "What's the estimated sample thickness (in angstroms)?"),
];

pub fn is_canonical(id: &str) -> bool {
    CANONICAL.iter().any(|(c, _)| *c == id)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
}

impl Question {
    pub fn canonical(&self) -> bool {
        is_canonical(&self.id)
    }
}

/// Reads the `- id: text` items under the `## Questions` heading.
///
/// The text is kept byte for byte after `id: `, trailing spaces included.
pub fn parse_questions(params_md: &str) -> Vec<Question> {
    let mut out = Vec::new();
    let mut in_section = false;
    for line in params_md.lines() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if let Some(h) = line.strip_prefix("## ") {
            in_section = h.trim().eq_ignore_ascii_case("questions");
            continue;
        }
        if !in_section {
            continue;
        }
        let Some(item) = line.strip_prefix("- ") else {
            continue;
        };
        let Some((id, text)) = item.split_once(": ") else {
            continue;
        };
        let id = id.trim();
        if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') || text.trim().is_empty() {
            continue;
        }
        if out.iter().any(|q: &Question| q.id == id) {
            continue;
        }
        out.push(Question {
            id: id.to_string(),
            text: text.to_string(),
        });
    }
    out
}

/// Canonical questions (texts may be overridden by the KB) followed by any
/// extra questions the KB declares.
pub fn generate_questions(kb: &KnowledgeBase) -> Result<Vec<Question>, KbError> {
    let doc = kb.require_doc("params.md")?;
    let declared = parse_questions(doc);
    if declared.is_empty() {
        return Err(KbError::BadDoc {
            doc: "params.md".into(),
            message: "no questions under a `## Questions` heading".into(),
        });
    }
    let mut out: Vec<Question> = CANONICAL
        .iter()
        .map(|(id, text)| {
            declared.iter().find(|q| q.id == *id).cloned().unwrap_or(Question {
                id: id.to_string(),
                text: text.to_string(),
            })
        })
        .collect();
    out.extend(declared.into_iter().filter(|q| !q.canonical()));
    Ok(out)
}

/// Output schema of the collector for one question; None for extra questions.
pub fn question_schema(id: &str) -> Option<Schema> {
    let s = Schema::new(id);
    Some(match id {
        "scan_number" => s.required("scan_number", SchemaType::Int),
        "beam_energy" => s.required("beam_energy", SchemaType::Real),
        "radius_bright_field" => s.required("radius_bright_field", SchemaType::Real),
        "convergence_angle" => s.required("convergence_angle", SchemaType::Real),
        "detector_size" => s.required("size_of_diffraction_patterns", SchemaType::Int),
        "initial_object" => s
            .required("use_external_object", SchemaType::Bool)
            .optional("initial_object_path", SchemaType::Text),
        "initial_probe" => s
            .required("use_external_probe", SchemaType::Bool)
            .optional("initial_probe_file", SchemaType::Text)
            .optional("defocus", SchemaType::Real),
        "probe_accuracy" => s.required("initial_probe_accurate", SchemaType::Bool),
        "scan_positions" => s
            .required("grid_scan_positions", SchemaType::Bool)
            .optional("use_external_positions", SchemaType::Bool)
            .optional("initial_position_file", SchemaType::Text)
            .optional("scan_step_size_x", SchemaType::Real)
            .optional("scan_step_size_y", SchemaType::Real)
            .optional("number_scan_points_x", SchemaType::Int)
            .optional("number_scan_points_y", SchemaType::Int),
        "probe_modes" => s.required("number_of_probe_modes", SchemaType::Int),
        "gpu" => s.required("gpu_id", SchemaType::Int),
        "total_patterns" => s.required("total_patterns", SchemaType::Int),
        "drift" => s.required("sample_drifted", SchemaType::Bool),
        "thickness" => s.required("sample_thickness", SchemaType::Real),
        _ => return None,
    })
}

/// The question whose schema declares exactly these keys.
pub fn question_for_keys(keys: &[String]) -> Option<&'static str> {
    CANONICAL.iter().map(|(id, _)| *id).find(|id| {
        let schema = question_schema(id).expect("canonical schema");
        schema.keys.len() == keys.len() && schema.keys.iter().all(|k| keys.contains(&k.name))
    })
}

/// Facts filled in while collecting.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PartialFacts {
    pub total_patterns: Option<u64>,
    pub beam_energy: Option<f64>,
    pub initial_probe_accurate: Option<bool>,
    pub sample_drifted: Option<bool>,
    pub sample_thickness: Option<f64>,
}

impl PartialFacts {
    pub fn missing(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.total_patterns.is_none() {
            out.push("total_patterns");
        }
        if self.beam_energy.is_none() {
            out.push("beam_energy");
        }
        if self.initial_probe_accurate.is_none() {
            out.push("initial_probe_accurate");
        }
        if self.sample_drifted.is_none() {
            out.push("sample_drifted");
        }
        if self.sample_thickness.is_none() {
            out.push("sample_thickness");
        }
        out
    }

    pub fn complete(&self) -> Option<ExperimentFacts> {
        Some(ExperimentFacts {
            total_patterns: self.total_patterns?,
            beam_energy: self.beam_energy?,
            initial_probe_accurate: self.initial_probe_accurate?,
            sample_drifted: self.sample_drifted?,
            sample_thickness: self.sample_thickness?,
        })
    }
}

fn real(v: &Map<String, Value>, k: &str) -> Option<f64> {
    v.get(k).and_then(Value::as_f64)
}

fn int(v: &Map<String, Value>, k: &str) -> Option<u64> {
    v.get(k).and_then(Value::as_u64)
}

fn boolean(v: &Map<String, Value>, k: &str) -> Option<bool> {
    v.get(k).and_then(Value::as_bool)
}

fn text(v: &Map<String, Value>, k: &str) -> Option<String> {
    v.get(k).and_then(Value::as_str).map(str::to_string)
}

/// Writes a schema-conforming answer into the parameters and facts.
pub fn apply_answer(id: &str, v: &Map<String, Value>, p: &mut ReconstructionParams, f: &mut PartialFacts) {
    match id {
        "scan_number" => p.scan_number = int(v, "scan_number").unwrap_or(p.scan_number),
        "beam_energy" => {
            if let Some(e) = real(v, "beam_energy") {
                p.beam_energy = e;
                f.beam_energy = Some(e);
            }
        }
        "radius_bright_field" => p.radius_bright_field = real(v, "radius_bright_field").unwrap_or(p.radius_bright_field),
        "convergence_angle" => p.convergence_angle = real(v, "convergence_angle").unwrap_or(p.convergence_angle),
        "detector_size" => {
            p.size_of_diffraction_patterns = int(v, "size_of_diffraction_patterns").unwrap_or(p.size_of_diffraction_patterns)
        }
        "initial_object" => {
            p.use_external_object = boolean(v, "use_external_object").unwrap_or(false);
            p.initial_object_path = if p.use_external_object {
                text(v, "initial_object_path").unwrap_or_default()
            } else {
                String::new()
            };
        }
        "initial_probe" => {
            p.use_external_probe = boolean(v, "use_external_probe").unwrap_or(false);
            if p.use_external_probe {
                p.initial_probe_file = text(v, "initial_probe_file").unwrap_or_default();
                p.defocus = 0.0;
            } else {
                p.initial_probe_file = String::new();
                p.defocus = real(v, "defocus").unwrap_or(0.0);
            }
        }
        "probe_accuracy" => f.initial_probe_accurate = boolean(v, "initial_probe_accurate"),
        "scan_positions" => {
            p.grid_scan_positions = boolean(v, "grid_scan_positions").unwrap_or(true);
            p.use_external_positions = boolean(v, "use_external_positions").unwrap_or(!p.grid_scan_positions);
            p.initial_position_file = if p.use_external_positions {
                text(v, "initial_position_file").unwrap_or_default()
            } else {
                String::new()
            };
            if let Some(x) = real(v, "scan_step_size_x") {
                p.scan_step_size_x = x;
                p.scan_step_size_y = real(v, "scan_step_size_y").unwrap_or(x);
            }
            if let Some(x) = int(v, "number_scan_points_x") {
                p.number_scan_points_x = x;
                p.number_scan_points_y = int(v, "number_scan_points_y").unwrap_or(x);
            }
        }
        "probe_modes" => p.number_of_probe_modes = int(v, "number_of_probe_modes").unwrap_or(p.number_of_probe_modes),
        "gpu" => p.gpu_id = int(v, "gpu_id").unwrap_or(p.gpu_id),
        "total_patterns" => f.total_patterns = int(v, "total_patterns"),
        "drift" => f.sample_drifted = boolean(v, "sample_drifted"),
        "thickness" => {
            if let Some(t) = real(v, "sample_thickness") {
                p.object_thickness = t;
                f.sample_thickness = Some(t);
            }
        }
        _ => {}
    }
}

// ---------------------------------------------------------------------------
// Reading free-text answers

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"-?\d+(?:\.\d+)?").expect("number pattern"))
}

fn product_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(\d+(?:\.\d+)?)\s*(?:x|X|×|\*|by)\s*(\d+(?:\.\d+)?)").expect("product pattern")
    })
}

fn path_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?:~|\.{0,2})?/[^\s,;]+|[\w.-]+\.(?:mat|h5|hdf5)\b").expect("path pattern"))
}

/// Numbers written in the answer that are not part of a path or a word;
/// digits first, then numbers spelled out in words.
pub fn answer_numbers(answer: &str) -> Vec<f64> {
    let stripped = path_re().replace_all(answer, " ");
    let mut out: Vec<f64> = number_re()
        .find_iter(&stripped)
        .filter(|m| {
            let before = stripped[..m.start()].chars().next_back();
            let after = stripped[m.end()..].chars().next();
            !before.is_some_and(|c| c.is_alphabetic() || c == '_') && !after.is_some_and(|c| c.is_alphabetic() && c != 'x' && c != 'X')
        })
        .filter_map(|m| m.as_str().parse().ok())
        .collect();
    out.extend(word_numbers(&stripped));
    out
}

fn unit_word(w: &str) -> Option<u64> {
    const UNITS: [&str; 20] = [
        "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven", "twelve",
        "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen",
    ];
    const TENS: [&str; 8] = ["twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety"];
    if let Some(i) = UNITS.iter().position(|u| *u == w) {
        return Some(i as u64);
    }
    TENS.iter().position(|t| *t == w).map(|i| (i as u64 + 2) * 10)
}

/// Numbers spelled out in English words, such as "a hundred" or "sixty-four".
pub fn word_numbers(text: &str) -> Vec<f64> {
    let lower = text.to_lowercase();
    let tokens: Vec<&str> = lower
        .split(|c: char| !c.is_ascii_alphabetic())
        .filter(|t| !t.is_empty())
        .collect();
    let mut out = Vec::new();
    let (mut total, mut current, mut active) = (0u64, 0u64, false);
    for (i, t) in tokens.iter().enumerate() {
        let next = tokens.get(i + 1).copied();
        if let Some(v) = unit_word(t) {
            current += v;
            active = true;
        } else if *t == "hundred" {
            current = current.max(1) * 100;
            active = true;
        } else if *t == "thousand" {
            total += current.max(1) * 1000;
            current = 0;
            active = true;
        } else if *t == "a" && matches!(next, Some("hundred" | "thousand")) {
            active = true;
        } else if *t == "and" && active && next.is_some_and(|n| unit_word(n).is_some()) {
        } else if active {
            out.push((total + current) as f64);
            (total, current, active) = (0, 0, false);
        }
    }
    if active {
        out.push((total + current) as f64);
    }
    out
}

/// `a x b` pairs in the answer.
pub fn product_pairs(answer: &str) -> Vec<(f64, f64)> {
    let stripped = path_re().replace_all(answer, " ");
    product_re()
        .captures_iter(&stripped)
        .filter_map(|c| Some((c[1].parse().ok()?, c[2].parse().ok()?)))
        .collect()
}

/// The first file path in the answer, trailing punctuation removed.
pub fn find_path(answer: &str) -> Option<String> {
    path_re()
        .find(answer)
        .map(|m| m.as_str().trim_end_matches(['.', ')', '\'', '"']).to_string())
        .filter(|p| p.len() > 1)
}

/// Reads a yes/no answer from its first word.
pub fn yes_no(answer: &str) -> Option<bool> {
    let lower = answer.trim().to_lowercase();
    let first: String = lower.chars().take_while(|c| c.is_alphanumeric() || *c == '\'').collect();
    match first.as_str() {
        "yes" | "y" | "yeah" | "yep" | "true" | "sure" | "correct" | "affirmative" => Some(true),
        "no" | "n" | "nope" | "not" | "false" | "none" | "nothing" | "never" | "didn't" | "don't" => Some(false),
        _ => None,
    }
}
