//! JSON output schemas and the corrective retry message.

use serde_json::{Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemaType {
    /// JSON integer; a real with a fractional part is rejected.
    Int,
    /// Any JSON number.
    Real,
    Bool,
    Text,
    TextList,
    /// Any JSON object; its contents are checked by the caller.
    Object,
}

impl SchemaType {
    pub fn describe(self) -> &'static str {
        match self {
            SchemaType::Int => "integer",
            SchemaType::Real => "number",
            SchemaType::Bool => "boolean",
            SchemaType::Text => "string",
            SchemaType::TextList => "list of strings",
            SchemaType::Object => "object",
        }
    }

    pub fn accepts(self, v: &Value) -> bool {
        match self {
            SchemaType::Int => v.is_u64() || v.is_i64(),
            SchemaType::Real => v.is_number(),
            SchemaType::Bool => v.is_boolean(),
            SchemaType::Text => v.is_string(),
            SchemaType::TextList => v.as_array().is_some_and(|a| a.iter().all(Value::is_string)),
            SchemaType::Object => v.is_object(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemaKey {
    pub name: String,
    pub ty: SchemaType,
    pub required: bool,
}

/// Keys and value types a structured response must have.
#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    pub name: String,
    pub keys: Vec<SchemaKey>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Offending key, or empty when the reply is not a JSON object.
    pub key: String,
    pub problem: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.key.is_empty() {
            write!(f, "{}", self.problem)
        } else {
            write!(f, "\"{}\" {}", self.key, self.problem)
        }
    }
}

impl Schema {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            keys: Vec::new(),
        }
    }

    pub fn required(mut self, name: &str, ty: SchemaType) -> Self {
        self.keys.push(SchemaKey {
            name: name.into(),
            ty,
            required: true,
        });
        self
    }

    pub fn optional(mut self, name: &str, ty: SchemaType) -> Self {
        self.keys.push(SchemaKey {
            name: name.into(),
            ty,
            required: false,
        });
        self
    }

    pub fn key(&self, name: &str) -> Option<&SchemaKey> {
        self.keys.iter().find(|k| k.name == name)
    }

    /// Checks a reply. Unknown keys are violations too, so a reply cannot
    /// smuggle in fields the caller did not ask for.
    pub fn check(&self, reply: &str) -> Result<Map<String, Value>, Vec<Violation>> {
        let value = parse_json_reply(reply).map_err(|problem| {
            vec![Violation {
                key: String::new(),
                problem,
            }]
        })?;
        let Value::Object(map) = value else {
            return Err(vec![Violation {
                key: String::new(),
                problem: "the reply is not a JSON object".into(),
            }]);
        };
        let mut violations = Vec::new();
        for k in &self.keys {
            match map.get(&k.name) {
                None if k.required => violations.push(Violation {
                    key: k.name.clone(),
                    problem: "is missing".into(),
                }),
                None => {}
                Some(v) if !k.ty.accepts(v) => violations.push(Violation {
                    key: k.name.clone(),
                    problem: format!("must be a {}", k.ty.describe()),
                }),
                Some(_) => {}
            }
        }
        for key in map.keys() {
            if self.key(key).is_none() {
                violations.push(Violation {
                    key: key.clone(),
                    problem: "is not an expected key".into(),
                });
            }
        }
        if violations.is_empty() {
            Ok(map)
        } else {
            Err(violations)
        }
    }

    /// `"a" (integer), "b" (boolean, optional)`
    pub fn key_list(&self) -> String {
        self.keys
            .iter()
            .map(|k| {
                if k.required {
                    format!("\"{}\" ({})", k.name, k.ty.describe())
                } else {
                    format!("\"{}\" ({}, optional)", k.name, k.ty.describe())
                }
            })
            .collect::<Vec<_>>()
            .join(", ")
    }
}

/// Parses a reply as JSON, tolerating a surrounding Markdown code fence.
pub fn parse_json_reply(reply: &str) -> Result<Value, String> {
    let body = strip_fence(reply.trim());
    serde_json::from_str(body).map_err(|e| format!("the reply is not valid JSON ({e})"))
}

fn strip_fence(s: &str) -> &str {
    let Some(rest) = s.strip_prefix("```") else {
        return s;
    };
    let Some(rest) = rest.strip_suffix("```") else {
        return s;
    };
    // drop an info string such as `json`
    match rest.find('\n') {
        Some(nl) if !rest[..nl].contains('{') => rest[nl + 1..].trim(),
        _ => rest.trim(),
    }
}

/// The fixed corrective message appended before a retry.
pub fn corrective_message(schema: &Schema, violations: &[Violation]) -> String {
    let problems: Vec<String> = violations.iter().map(ToString::to_string).collect();
    format!(
        "Your previous reply could not be used: {}. Reply again with only a JSON object with the keys {}.",
        problems.join("; "),
        schema.key_list()
    )
}
