//! Prompt templates: `{{slot}}` substitution and section parsing.
//!
//! A template file holds the system prompt, a line `---`, then the user
//! prompt. The user prompt is organised in `### Heading` sections.

use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("prompt template `{0}` is missing from the knowledge base")]
    Missing(String),
    #[error("prompt template `{name}` has no `---` separator")]
    NoSeparator { name: String },
    #[error("prompt template `{name}` uses unknown slots: {slots:?}")]
    UnknownSlots { name: String, slots: Vec<String> },
}

/// Slot names used in a template, in order of first use.
pub fn slots(template: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        let after = &rest[start + 2..];
        let Some(end) = after.find("}}") else { break };
        let name = after[..end].trim().to_string();
        if !out.contains(&name) {
            out.push(name);
        }
        rest = &after[end + 2..];
    }
    out
}

/// Splits a template and fills its slots. Slots the caller provides but the
/// template does not use are ignored; slots the template uses but the caller
/// does not provide are an error.
pub fn render_prompt(name: &str, template: &str, values: &[(&str, &str)]) -> Result<(String, String), PromptError> {
    let unknown: Vec<String> = slots(template)
        .into_iter()
        .filter(|s| !values.iter().any(|(k, _)| k == s))
        .collect();
    if !unknown.is_empty() {
        return Err(PromptError::UnknownSlots {
            name: name.to_string(),
            slots: unknown,
        });
    }
    let (system, user) = split_template(template).ok_or_else(|| PromptError::NoSeparator { name: name.to_string() })?;
    Ok((fill(system, values).trim().to_string(), fill(user, values).trim().to_string()))
}

fn split_template(template: &str) -> Option<(&str, &str)> {
    let mut offset = 0;
    for line in template.split_inclusive('\n') {
        if line.trim_end() == "---" {
            return Some((&template[..offset], &template[offset + line.len()..]));
        }
        offset += line.len();
    }
    None
}

fn fill(text: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find("{{") {
        let after = &rest[start + 2..];
        let Some(end) = after.find("}}") else { break };
        let name = after[..end].trim();
        out.push_str(&rest[..start]);
        match values.iter().find(|(k, _)| *k == name) {
            Some((_, v)) => out.push_str(v),
            None => out.push_str(&rest[start..start + end + 4]),
        }
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    out
}

/// `### Heading` sections of a user prompt, bodies trimmed.
pub fn parse_sections(text: &str) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut current: Option<(String, Vec<&str>)> = None;
    for line in text.lines() {
        if let Some(h) = line.strip_prefix("### ") {
            if let Some((name, body)) = current.take() {
                out.insert(name, body.join("\n").trim().to_string());
            }
            current = Some((h.trim().to_string(), Vec::new()));
        } else if let Some((_, body)) = current.as_mut() {
            body.push(line);
        }
    }
    if let Some((name, body)) = current {
        out.insert(name, body.join("\n").trim().to_string());
    }
    out
}

/// The role named by "You are the <Role> agent" in a system prompt.
pub fn role_in_system_prompt(system: &str) -> Option<&str> {
    let start = system.find("You are the ")? + "You are the ".len();
    let rest = &system[start..];
    let end = rest.find(" agent")?;
    Some(&rest[..end])
}
