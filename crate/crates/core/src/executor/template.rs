//! Script templates with `{field}` placeholders.
//!
//! Any `{identifier}` in a template is a placeholder and must name a parameter
//! field; every field must appear at least once. Text values are written as
//! MATLAB single-quoted strings.

use std::collections::BTreeMap;

use regex::Regex;
use thiserror::Error;

use crate::params::{format_real, Field, FieldKind, FieldValue, ReconstructionParams};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("template placeholders do not match the parameter fields (missing: {missing:?}, unknown: {unknown:?})")]
    Placeholders { missing: Vec<String>, unknown: Vec<String> },
}

/// Why a script does not conform to its template.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StructureError {
    #[error("script has {script} lines, template has {template}")]
    LineCount { script: usize, template: usize },
    #[error("line {0} does not match the template")]
    LineMismatch(usize),
    #[error("value of {field} on line {line} cannot be parsed: {raw}")]
    BadValue { field: String, line: usize, raw: String },
}

fn placeholder_re() -> &'static Regex {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([A-Za-z_][A-Za-z0-9_]*)\}").expect("valid regex"))
}

/// Placeholder names in order of first appearance.
pub fn placeholders(template: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for cap in placeholder_re().captures_iter(template) {
        let name = cap[1].to_string();
        if !out.contains(&name) {
            out.push(name);
        }
    }
    out
}

pub fn check_template(template: &str) -> Result<(), TemplateError> {
    let names = placeholders(template);
    let unknown: Vec<String> = names
        .iter()
        .filter(|n| Field::from_name(n).is_none())
        .cloned()
        .collect();
    let missing: Vec<String> = Field::ALL
        .iter()
        .map(|f| f.name().to_string())
        .filter(|n| !names.contains(n))
        .collect();
    if missing.is_empty() && unknown.is_empty() {
        Ok(())
    } else {
        Err(TemplateError::Placeholders { missing, unknown })
    }
}

pub fn matlab_string(s: &str) -> String {
    format!("'{}'", s.replace('\'', "''"))
}

/// MATLAB literal for a field value.
pub fn matlab_literal(value: &FieldValue) -> String {
    match value {
        FieldValue::Text(s) => matlab_string(s),
        FieldValue::Bool(b) => b.to_string(),
        FieldValue::Int(v) => v.to_string(),
        FieldValue::Real(v) => format_real(*v),
    }
}

/// Substitutes every placeholder.
pub fn render_script(params: &ReconstructionParams, template: &str) -> Result<String, TemplateError> {
    check_template(template)?;
    Ok(placeholder_re()
        .replace_all(template, |cap: &regex::Captures<'_>| {
            let field = Field::from_name(&cap[1]).expect("checked above");
            matlab_literal(&params.get(field))
        })
        .into_owned())
}

fn parse_matlab_value(kind: FieldKind, raw: &str) -> Option<FieldValue> {
    let raw = raw.trim();
    match kind {
        FieldKind::Text => {
            let inner = raw.strip_prefix('\'')?.strip_suffix('\'')?;
            // a lone quote inside is a syntax error
            let unescaped = inner.replace("''", "");
            if unescaped.contains('\'') {
                return None;
            }
            Some(FieldValue::Text(inner.replace("''", "'")))
        }
        FieldKind::Bool => match raw {
            "true" => Some(FieldValue::Bool(true)),
            "false" => Some(FieldValue::Bool(false)),
            _ => None,
        },
        FieldKind::Int => {
            if raw.is_empty() || !raw.bytes().all(|b| b.is_ascii_digit()) {
                return None;
            }
            raw.parse().ok().map(FieldValue::Int)
        }
        FieldKind::Real => {
            let v: f64 = raw.parse().ok()?;
            v.is_finite().then_some(FieldValue::Real(v))
        }
    }
}

/// Matches `s` against literal pieces with a gap between each pair, trying
/// the shortest gap first. Returns the gaps.
fn match_literals<'s>(literals: &[&str], s: &'s str) -> Option<Vec<&'s str>> {
    let rest = s.strip_prefix(literals[0])?;
    let mut gaps = Vec::with_capacity(literals.len() - 1);
    fill_gaps(&literals[1..], rest, &mut gaps).then_some(gaps)
}

fn fill_gaps<'s>(literals: &[&str], s: &'s str, gaps: &mut Vec<&'s str>) -> bool {
    let Some((lit, tail)) = literals.split_first() else {
        return s.is_empty();
    };
    if tail.is_empty() {
        return match s.strip_suffix(lit) {
            Some(gap) => {
                gaps.push(gap);
                true
            }
            None => false,
        };
    }
    for (at, _) in s.match_indices(lit) {
        gaps.push(&s[..at]);
        if fill_gaps(tail, &s[at + lit.len()..], gaps) {
            return true;
        }
        gaps.pop();
    }
    false
}

/// Reads the parameter values back out of a script rendered from `template`.
///
/// The script must have the template's lines, with literal text unchanged and
/// each placeholder replaced by a parseable value of its field's type. A
/// field that appears more than once yields one entry per occurrence.
pub fn extract_values(script: &str, template: &str) -> Result<BTreeMap<Field, Vec<FieldValue>>, StructureError> {
    let t_lines: Vec<&str> = template.lines().collect();
    let s_lines: Vec<&str> = script.lines().collect();
    if t_lines.len() != s_lines.len() {
        return Err(StructureError::LineCount {
            script: s_lines.len(),
            template: t_lines.len(),
        });
    }
    let mut out: BTreeMap<Field, Vec<FieldValue>> = BTreeMap::new();
    for (idx, (t, s)) in t_lines.iter().zip(&s_lines).enumerate() {
        let line = idx + 1;
        let names: Vec<String> = placeholder_re()
            .captures_iter(t)
            .map(|c| c[1].to_string())
            .collect();
        if names.is_empty() {
            if t != s {
                return Err(StructureError::LineMismatch(line));
            }
            continue;
        }
        let mut literals = Vec::with_capacity(names.len() + 1);
        let mut last = 0;
        for m in placeholder_re().find_iter(t) {
            literals.push(&t[last..m.start()]);
            last = m.end();
        }
        literals.push(&t[last..]);
        let caps = match_literals(&literals, s).ok_or(StructureError::LineMismatch(line))?;
        for (i, name) in names.iter().enumerate() {
            let field = Field::from_name(name).ok_or(StructureError::LineMismatch(line))?;
            let raw = caps[i];
            let value = parse_matlab_value(field.kind(), raw).ok_or_else(|| StructureError::BadValue {
                field: name.clone(),
                line,
                raw: raw.to_string(),
            })?;
            out.entry(field).or_default().push(value);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::parse_params;

    const TEMPLATE: &str = include_str!("../../kb/demo/script_template.md");

    fn template() -> String {
        let start = TEMPLATE.find("```matlab\n").unwrap() + "```matlab\n".len();
        let end = TEMPLATE[start..].find("```").unwrap() + start;
        TEMPLATE[start..end].to_string()
    }

    fn recon_1() -> ReconstructionParams {
        parse_params(include_str!("../../tests/fixtures/recon_1.json")).unwrap()
    }

    #[test]
    fn default_template_is_complete() {
        check_template(&template()).unwrap();
    }

    #[test]
    fn renders_case_study_values() {
        let script = render_script(&recon_1(), &template()).unwrap();
        assert!(script.contains("Niter = 50"));
        assert!(script.contains("'/Modified/to/Hide/User/Info/Niter1000.mat'"));
        assert!(!script.contains('{') || !placeholder_re().is_match(&script));
    }

    #[test]
    fn unknown_placeholder_is_an_error() {
        let bad = format!("{}\nx = {{not_a_field}};\n", template());
        match render_script(&recon_1(), &bad).unwrap_err() {
            TemplateError::Placeholders { unknown, missing } => {
                assert_eq!(unknown, vec!["not_a_field"]);
                assert!(missing.is_empty());
            }
        }
        assert!(render_script(&recon_1(), "Niter = {number_of_iterations}").is_err());
    }

    #[test]
    fn values_round_trip_through_the_script() {
        let mut p = recon_1();
        p.data_directory = "/it's/here".into();
        let script = render_script(&p, &template()).unwrap();
        let values = extract_values(&script, &template()).unwrap();
        for field in Field::ALL {
            for v in &values[&field] {
                let expected = p.get(field);
                match (v, &expected) {
                    (FieldValue::Real(a), FieldValue::Real(b)) => assert_eq!(a, b),
                    _ => assert_eq!(v, &expected, "{field}"),
                }
            }
        }
    }

    #[test]
    fn leftover_placeholder_is_a_structure_error() {
        let script = render_script(&recon_1(), &template()).unwrap();
        let broken = script.replacen("beam_energy = 300", "beam_energy = {beam_energy}", 1);
        assert_ne!(broken, script);
        assert!(matches!(
            extract_values(&broken, &template()),
            Err(StructureError::BadValue { .. })
        ));
        let truncated: String = script.lines().skip(1).collect::<Vec<_>>().join("\n");
        assert!(matches!(
            extract_values(&truncated, &template()),
            Err(StructureError::LineCount { .. })
        ));
    }

    #[test]
    fn matlab_quoting() {
        assert_eq!(matlab_string("a'b"), "'a''b'");
        assert_eq!(parse_matlab_value(FieldKind::Text, "'a''b'"), Some(FieldValue::Text("a'b".into())));
        assert_eq!(parse_matlab_value(FieldKind::Text, "'a'b'"), None);
        assert_eq!(parse_matlab_value(FieldKind::Int, "12.0"), None);
    }
}
