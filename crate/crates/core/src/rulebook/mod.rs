//! Deterministic parameter rules.
//!
//! Rules live in a Markdown file as list items:
//!
//! ```text
//! - when total_patterns >= 1 then update_batch_size = floor_sqrt(total_patterns) : batch size
//! - when issues contains atoms_blurred then diff_pattern_blur += 0.5 : sharpen
//! ```
//!
//! Conditions compare experiment facts, quality-report answers or current
//! parameter values against literals. A heading containing "initial" or
//! "update" scopes the following rules to that phase; without one the phase is
//! inferred from the identifiers a rule mentions. Rules run in file order over
//! a working copy, so a later rule sees earlier assignments and the last writer
//! wins per field.

pub mod expr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::{Field, FieldKind, FieldValue, ReconstructionParams};
use expr::{parse_expr, BinOp, Expr};

/// Facts about the experiment gathered from the user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentFacts {
    pub total_patterns: u64,
    /// keV
    pub beam_energy: f64,
    pub initial_probe_accurate: bool,
    pub sample_drifted: bool,
    /// angstroms
    pub sample_thickness: f64,
}

/// Free-text observations the update rules understand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueTag {
    PerLayerRandomFeatures,
    AtomsBlurred,
    None,
}

impl IssueTag {
    pub const ALL: [IssueTag; 3] = [
        IssueTag::PerLayerRandomFeatures,
        IssueTag::AtomsBlurred,
        IssueTag::None,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            IssueTag::PerLayerRandomFeatures => "per_layer_random_features",
            IssueTag::AtomsBlurred => "atoms_blurred",
            IssueTag::None => "none",
        }
    }

    pub fn from_name(s: &str) -> Option<IssueTag> {
        IssueTag::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

/// Answers to the post-reconstruction quality questions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub converged: bool,
    pub grid_artifacts: bool,
    pub initial_probe_accurate: bool,
    pub last_probe_mode_structures: bool,
    pub free_text_issues: Vec<IssueTag>,
    /// Verbatim answer to the open question, kept for the log.
    #[serde(default)]
    pub raw_text: String,
}

impl Default for QualityReport {
    fn default() -> Self {
        Self::clean()
    }
}

impl QualityReport {
    pub fn clean() -> Self {
        Self {
            converged: true,
            grid_artifacts: false,
            initial_probe_accurate: true,
            last_probe_mode_structures: false,
            free_text_issues: vec![IssueTag::None],
            raw_text: String::new(),
        }
    }

    pub fn has_issue(&self, tag: IssueTag) -> bool {
        self.free_text_issues.contains(&tag)
    }

    /// True when nothing calls for another reconstruction.
    pub fn is_clean(&self) -> bool {
        self.converged
            && !self.grid_artifacts
            && self.initial_probe_accurate
            && !self.last_probe_mode_structures
            && self.free_text_issues.iter().all(|t| *t == IssueTag::None)
    }

    /// Sorts and dedups the tags; `none` is kept only when nothing else is.
    pub fn normalize_tags(&mut self) {
        let mut tags: Vec<IssueTag> = IssueTag::ALL
            .into_iter()
            .filter(|t| *t != IssueTag::None && self.free_text_issues.contains(t))
            .collect();
        if tags.is_empty() {
            tags.push(IssueTag::None);
        }
        self.free_text_issues = tags;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Initial,
    Update,
    Any,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Contains,
}

impl CmpOp {
    fn parse(s: &str) -> Option<CmpOp> {
        Some(match s {
            "=" | "==" => CmpOp::Eq,
            "!=" => CmpOp::Ne,
            "<" => CmpOp::Lt,
            "<=" => CmpOp::Le,
            ">" => CmpOp::Gt,
            ">=" => CmpOp::Ge,
            "contains" => CmpOp::Contains,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Bool(bool),
    Num(f64),
    Text(String),
    Tag(IssueTag),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub ident: String,
    pub op: CmpOp,
    pub value: Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionKind {
    Assign,
    Increment,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub id: String,
    pub line: usize,
    pub phase: Phase,
    pub conditions: Vec<Condition>,
    pub target: Field,
    pub action: ActionKind,
    pub expr: Expr,
    pub explanation: String,
}

/// One rule firing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub rule_id: String,
    pub field: Field,
    pub old: FieldValue,
    pub new: FieldValue,
    pub text: String,
}

impl std::fmt::Display for Explanation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} ({}: {} -> {})",
            self.text,
            self.field,
            self.old.to_json_literal(),
            self.new.to_json_literal()
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recommendation {
    pub params: ReconstructionParams,
    pub explanations: Vec<Explanation>,
}

impl Recommendation {
    pub fn fired_fields(&self) -> Vec<Field> {
        let mut out: Vec<Field> = Vec::new();
        for e in &self.explanations {
            if !out.contains(&e.field) {
                out.push(e.field);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("rule file line {line}: {message}")]
pub struct RuleParseError {
    pub line: usize,
    pub message: String,
}

// ---------------------------------------------------------------------------
// Identifier namespaces

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ty {
    Bool,
    Num,
    Text,
    Tags,
}

const FACT_NAMES: [(&str, Ty); 5] = [
    ("total_patterns", Ty::Num),
    ("beam_energy", Ty::Num),
    ("initial_probe_accurate", Ty::Bool),
    ("sample_drifted", Ty::Bool),
    ("sample_thickness", Ty::Num),
];

const REPORT_NAMES: [(&str, Ty); 5] = [
    ("converged", Ty::Bool),
    ("grid_artifacts", Ty::Bool),
    ("initial_probe_accurate", Ty::Bool),
    ("last_probe_mode_structures", Ty::Bool),
    ("issues", Ty::Tags),
];

fn kind_ty(kind: FieldKind) -> Ty {
    match kind {
        FieldKind::Bool => Ty::Bool,
        FieldKind::Int | FieldKind::Real => Ty::Num,
        FieldKind::Text => Ty::Text,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ns {
    Facts,
    Report,
    Params,
}

fn split_prefix(ident: &str) -> (Option<Ns>, &str) {
    for (prefix, ns) in [("facts.", Ns::Facts), ("report.", Ns::Report), ("params.", Ns::Params)] {
        if let Some(rest) = ident.strip_prefix(prefix) {
            return (Some(ns), rest);
        }
    }
    (None, ident)
}

fn lookup_ty(ns: Ns, name: &str) -> Option<Ty> {
    match ns {
        Ns::Facts => FACT_NAMES.iter().find(|(n, _)| *n == name).map(|(_, t)| *t),
        Ns::Report => REPORT_NAMES.iter().find(|(n, _)| *n == name).map(|(_, t)| *t),
        Ns::Params => Field::from_name(name).map(|f| kind_ty(f.kind())),
    }
}

/// Type and the namespaces an identifier can resolve to.
fn resolve_static(ident: &str) -> Option<(Ty, Vec<Ns>)> {
    let (prefix, name) = split_prefix(ident);
    let candidates = match prefix {
        Some(ns) => vec![ns],
        None => vec![Ns::Facts, Ns::Report, Ns::Params],
    };
    let found: Vec<(Ns, Ty)> = candidates
        .into_iter()
        .filter_map(|ns| lookup_ty(ns, name).map(|t| (ns, t)))
        .collect();
    let ty = found.first()?.1;
    Some((ty, found.into_iter().map(|(ns, _)| ns).collect()))
}

// ---------------------------------------------------------------------------
// Parsing

fn parse_literal(s: &str) -> Option<Literal> {
    let s = s.trim();
    if s == "true" {
        return Some(Literal::Bool(true));
    }
    if s == "false" {
        return Some(Literal::Bool(false));
    }
    if let Ok(v) = s.parse::<f64>() {
        return v.is_finite().then_some(Literal::Num(v));
    }
    if let Some(tag) = IssueTag::from_name(s) {
        return Some(Literal::Tag(tag));
    }
    if s.len() >= 2 && s.starts_with('"') && s.ends_with('"') {
        return Some(Literal::Text(s[1..s.len() - 1].to_string()));
    }
    None
}

fn parse_condition(src: &str) -> Result<(Condition, Vec<Ns>), String> {
    let parts: Vec<&str> = src.split_whitespace().collect();
    if parts.len() < 3 {
        return Err(format!("malformed condition `{src}`"));
    }
    let ident = parts[0].to_string();
    let op = CmpOp::parse(parts[1]).ok_or_else(|| format!("unknown operator `{}`", parts[1]))?;
    let value_src = parts[2..].join(" ");
    let value = parse_literal(&value_src).ok_or_else(|| format!("bad value `{value_src}`"))?;
    let (ty, namespaces) =
        resolve_static(&ident).ok_or_else(|| format!("unknown identifier `{ident}`"))?;

    let ok = match (ty, op, &value) {
        (Ty::Tags, CmpOp::Contains, Literal::Tag(_)) => true,
        (Ty::Tags, _, _) | (_, CmpOp::Contains, _) => false,
        (Ty::Bool, CmpOp::Eq | CmpOp::Ne, Literal::Bool(_)) => true,
        (Ty::Num, _, Literal::Num(_)) => true,
        (Ty::Text, CmpOp::Eq | CmpOp::Ne, Literal::Text(_)) => true,
        _ => false,
    };
    if !ok {
        return Err(format!("condition `{src}` does not type-check"));
    }
    Ok((Condition { ident, op, value }, namespaces))
}

fn expr_ty(e: &Expr, namespaces: &mut Vec<Ns>) -> Result<Ty, String> {
    match e {
        Expr::Num(_) => Ok(Ty::Num),
        Expr::Bool(_) => Ok(Ty::Bool),
        Expr::Str(_) => Ok(Ty::Text),
        Expr::Ident(name) => {
            let (ty, ns) =
                resolve_static(name).ok_or_else(|| format!("unknown identifier `{name}`"))?;
            if ty == Ty::Tags {
                return Err(format!("`{name}` cannot be used in an expression"));
            }
            namespaces.extend(ns);
            Ok(ty)
        }
        Expr::Neg(inner) => match expr_ty(inner, namespaces)? {
            Ty::Num => Ok(Ty::Num),
            _ => Err("negation of a non-number".into()),
        },
        Expr::Bin(_, l, r) => {
            let (a, b) = (expr_ty(l, namespaces)?, expr_ty(r, namespaces)?);
            if a == Ty::Num && b == Ty::Num {
                Ok(Ty::Num)
            } else {
                Err("arithmetic on a non-number".into())
            }
        }
        Expr::Call(_, args) => {
            for a in args {
                if expr_ty(a, namespaces)? != Ty::Num {
                    return Err("function argument is not a number".into());
                }
            }
            Ok(Ty::Num)
        }
    }
}

fn infer_phase(namespaces: &[Vec<Ns>]) -> Phase {
    let only = |ns: Ns| namespaces.iter().any(|set| set.len() == 1 && set[0] == ns);
    let report_only = only(Ns::Report);
    let facts_only = only(Ns::Facts);
    match (facts_only, report_only) {
        (true, false) => Phase::Initial,
        (false, true) => Phase::Update,
        _ => Phase::Any,
    }
}

fn parse_rule_line(body: &str, line: usize, heading_phase: Option<Phase>) -> Result<Rule, String> {
    let body = body.trim();
    let rest = body
        .strip_prefix("when ")
        .ok_or("rule must start with `when`")?;
    let (cond_src, action_src) = rest
        .split_once(" then ")
        .ok_or("missing `then`")?;
    let (action_src, explanation) = action_src
        .split_once(':')
        .ok_or("missing `: explanation`")?;
    let explanation = explanation.trim();
    if explanation.is_empty() {
        return Err("empty explanation".into());
    }

    let mut conditions = Vec::new();
    let mut namespaces = Vec::new();
    for part in cond_src.split(" and ") {
        let (c, ns) = parse_condition(part)?;
        conditions.push(c);
        namespaces.push(ns);
    }

    let action_src = action_src.trim();
    let (target_src, action, expr_src) = if let Some((t, e)) = action_src.split_once("+=") {
        (t, ActionKind::Increment, e)
    } else if let Some((t, e)) = action_src.split_once('=') {
        (t, ActionKind::Assign, e)
    } else {
        return Err("action must be `<param> = <expr>` or `<param> += <expr>`".into());
    };
    let target_name = target_src.trim();
    let target_name = target_name.strip_prefix("params.").unwrap_or(target_name);
    let target = Field::from_name(target_name)
        .ok_or_else(|| format!("unknown parameter `{target_name}`"))?;
    let expr = parse_expr(expr_src)?;
    let mut expr_ns = Vec::new();
    let ty = expr_ty(&expr, &mut expr_ns)?;
    if !expr_ns.is_empty() {
        namespaces.push(expr_ns);
    }

    let target_ty = kind_ty(target.kind());
    if ty != target_ty {
        return Err(format!("`{target}` cannot be assigned this expression"));
    }
    if action == ActionKind::Increment && target_ty != Ty::Num {
        return Err(format!("`+=` needs a numeric parameter, `{target}` is not"));
    }

    let phase = heading_phase.unwrap_or_else(|| infer_phase(&namespaces));
    Ok(Rule {
        id: format!("L{line}"),
        line,
        phase,
        conditions,
        target,
        action,
        expr,
        explanation: explanation.to_string(),
    })
}

/// Parses a rule file. Lines starting with `- when` are rules, everything
/// else is commentary. HTML comments are skipped.
pub fn load_rules(markdown: &str) -> Result<Vec<Rule>, RuleParseError> {
    let mut rules = Vec::new();
    let mut phase = None;
    let mut in_comment = false;
    let mut in_fence = false;
    for (idx, raw) in markdown.lines().enumerate() {
        let line_no = idx + 1;
        if raw.trim_start().starts_with("```") {
            in_fence = !in_fence;
            continue;
        }
        // fenced and indented code blocks hold examples, not rules
        if in_fence || raw.starts_with("    ") || raw.starts_with('\t') {
            continue;
        }
        let mut line = raw.trim();
        if in_comment {
            match line.find("-->") {
                Some(end) => {
                    in_comment = false;
                    line = line[end + 3..].trim();
                }
                None => continue,
            }
        }
        if let Some(start) = line.find("<!--") {
            match line[start..].find("-->") {
                Some(_) => {}
                None => in_comment = true,
            }
            line = line[..start].trim();
        }
        if line.starts_with('#') {
            let heading = line.to_ascii_lowercase();
            phase = if heading.contains("initial") {
                Some(Phase::Initial)
            } else if heading.contains("update") {
                Some(Phase::Update)
            } else {
                None
            };
            continue;
        }
        let Some(item) = line.strip_prefix("- ").or_else(|| line.strip_prefix("* ")) else {
            continue;
        };
        if !item.trim_start().starts_with("when ") {
            continue;
        }
        let rule = parse_rule_line(item, line_no, phase).map_err(|message| RuleParseError {
            line: line_no,
            message,
        })?;
        rules.push(rule);
    }
    Ok(rules)
}

// ---------------------------------------------------------------------------
// Evaluation

#[derive(Debug, Clone, PartialEq)]
enum Val {
    Bool(bool),
    Num(f64),
    Text(String),
    Tags(Vec<IssueTag>),
}

struct Ctx<'a> {
    facts: Option<&'a ExperimentFacts>,
    report: Option<&'a QualityReport>,
    params: &'a ReconstructionParams,
}

impl Ctx<'_> {
    fn get(&self, ident: &str) -> Option<Val> {
        let (prefix, name) = split_prefix(ident);
        let order: &[Ns] = match prefix {
            Some(Ns::Facts) => &[Ns::Facts],
            Some(Ns::Report) => &[Ns::Report],
            Some(Ns::Params) => &[Ns::Params],
            None => &[Ns::Facts, Ns::Report, Ns::Params],
        };
        order.iter().find_map(|ns| self.get_in(*ns, name))
    }

    fn get_in(&self, ns: Ns, name: &str) -> Option<Val> {
        match ns {
            Ns::Facts => {
                let f = self.facts?;
                Some(match name {
                    "total_patterns" => Val::Num(f.total_patterns as f64),
                    "beam_energy" => Val::Num(f.beam_energy),
                    "initial_probe_accurate" => Val::Bool(f.initial_probe_accurate),
                    "sample_drifted" => Val::Bool(f.sample_drifted),
                    "sample_thickness" => Val::Num(f.sample_thickness),
                    _ => return None,
                })
            }
            Ns::Report => {
                let r = self.report?;
                Some(match name {
                    "converged" => Val::Bool(r.converged),
                    "grid_artifacts" => Val::Bool(r.grid_artifacts),
                    "initial_probe_accurate" => Val::Bool(r.initial_probe_accurate),
                    "last_probe_mode_structures" => Val::Bool(r.last_probe_mode_structures),
                    "issues" => Val::Tags(r.free_text_issues.clone()),
                    _ => return None,
                })
            }
            Ns::Params => {
                let field = Field::from_name(name)?;
                Some(match self.params.get(field) {
                    FieldValue::Bool(b) => Val::Bool(b),
                    FieldValue::Int(v) => Val::Num(v as f64),
                    FieldValue::Real(v) => Val::Num(v),
                    FieldValue::Text(s) => Val::Text(s),
                })
            }
        }
    }

    fn holds(&self, c: &Condition) -> bool {
        let Some(actual) = self.get(&c.ident) else {
            return false;
        };
        match (&actual, &c.value) {
            (Val::Tags(tags), Literal::Tag(t)) => c.op == CmpOp::Contains && tags.contains(t),
            (Val::Bool(a), Literal::Bool(b)) => match c.op {
                CmpOp::Eq => a == b,
                CmpOp::Ne => a != b,
                _ => false,
            },
            (Val::Text(a), Literal::Text(b)) => match c.op {
                CmpOp::Eq => a == b,
                CmpOp::Ne => a != b,
                _ => false,
            },
            (Val::Num(a), Literal::Num(b)) => match c.op {
                CmpOp::Eq => a == b,
                CmpOp::Ne => a != b,
                CmpOp::Lt => a < b,
                CmpOp::Le => a <= b,
                CmpOp::Gt => a > b,
                CmpOp::Ge => a >= b,
                CmpOp::Contains => false,
            },
            _ => false,
        }
    }

    fn eval(&self, e: &Expr) -> Option<Val> {
        Some(match e {
            Expr::Num(v) => Val::Num(*v),
            Expr::Bool(b) => Val::Bool(*b),
            Expr::Str(s) => Val::Text(s.clone()),
            Expr::Ident(name) => self.get(name)?,
            Expr::Neg(inner) => Val::Num(-self.num(inner)?),
            Expr::Bin(op, l, r) => {
                let (a, b) = (self.num(l)?, self.num(r)?);
                Val::Num(match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                })
            }
            Expr::Call(func, args) => {
                let vals: Option<Vec<f64>> = args.iter().map(|a| self.num(a)).collect();
                Val::Num(func.apply(&vals?))
            }
        })
    }

    fn num(&self, e: &Expr) -> Option<f64> {
        match self.eval(e)? {
            Val::Num(v) => Some(v),
            _ => None,
        }
    }
}

fn round_to_nano(v: f64) -> f64 {
    (v * 1e9).round() / 1e9
}

fn clamp_to_field(field: Field, v: f64) -> f64 {
    let mut v = v.max(field.lower_bound());
    if let Some(hi) = field.upper_bound() {
        v = v.min(hi);
    }
    v
}

/// Computes the new value of the rule's target, or None when the rule cannot
/// produce a usable value (e.g. division by zero).
fn rule_value(rule: &Rule, ctx: &Ctx<'_>) -> Option<FieldValue> {
    let value = ctx.eval(&rule.expr)?;
    let field = rule.target;
    match (field.kind(), value) {
        (FieldKind::Bool, Val::Bool(b)) => Some(FieldValue::Bool(b)),
        (FieldKind::Text, Val::Text(s)) => Some(FieldValue::Text(s)),
        (kind @ (FieldKind::Int | FieldKind::Real), Val::Num(v)) => {
            let old = ctx.params.get(field).as_f64()?;
            let raw = match rule.action {
                ActionKind::Assign => v,
                ActionKind::Increment => old + v,
            };
            if !raw.is_finite() {
                return None;
            }
            let v = clamp_to_field(field, round_to_nano(raw));
            Some(if kind == FieldKind::Int {
                FieldValue::Int(expr::round_half_up(v).max(0.0) as u64)
            } else {
                FieldValue::Real(v)
            })
        }
        _ => None,
    }
}

/// An immutable, ordered collection of rules.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RuleSet {
    pub rules: Vec<Rule>,
}

/// The rule file shipped with the demo knowledge base.
pub const DEFAULT_RULES: &str = include_str!("../../kb/demo/rules.md");

impl RuleSet {
    pub fn parse(markdown: &str) -> Result<Self, RuleParseError> {
        Ok(Self {
            rules: load_rules(markdown)?,
        })
    }

    pub fn default_rules() -> Self {
        Self::parse(DEFAULT_RULES).expect("bundled rule file parses")
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    fn run(&self, phase: Phase, ctx_facts: Option<&ExperimentFacts>, ctx_report: Option<&QualityReport>, params: &ReconstructionParams) -> Recommendation {
        let mut working = params.clone();
        let mut explanations = Vec::new();
        for rule in self.rules.iter().filter(|r| r.phase == phase || r.phase == Phase::Any) {
            let ctx = Ctx {
                facts: ctx_facts,
                report: ctx_report,
                params: &working,
            };
            if !rule.conditions.iter().all(|c| ctx.holds(c)) {
                continue;
            }
            let Some(new) = rule_value(rule, &ctx) else {
                tracing::warn!(rule = %rule.id, "rule produced no usable value; skipped");
                continue;
            };
            let old = working.get(rule.target);
            working
                .set(rule.target, new.clone())
                .expect("rule value matches field kind");
            explanations.push(Explanation {
                rule_id: rule.id.clone(),
                field: rule.target,
                old,
                new,
                text: rule.explanation.clone(),
            });
        }
        Recommendation {
            params: working,
            explanations,
        }
    }

    /// Initial recommendations from the collected experiment facts.
    pub fn recommend_initial(&self, facts: &ExperimentFacts, params: &ReconstructionParams) -> Recommendation {
        self.run(Phase::Initial, Some(facts), None, params)
    }

    /// Updates after a reconstruction, driven by the quality report.
    pub fn recommend_updates(&self, report: &QualityReport, params: &ReconstructionParams) -> Recommendation {
        self.run(Phase::Update, None, Some(report), params)
    }

    /// Rules of one phase rendered back into the file grammar, for prompts.
    pub fn describe(&self, phase: Phase) -> String {
        let mut out = String::new();
        for r in self.rules.iter().filter(|r| r.phase == phase || r.phase == Phase::Any) {
            out.push_str(&render_rule(r));
            out.push('\n');
        }
        out
    }
}

fn render_literal(l: &Literal) -> String {
    match l {
        Literal::Bool(b) => b.to_string(),
        Literal::Num(v) => crate::params::format_real(*v),
        Literal::Text(s) => format!("\"{s}\""),
        Literal::Tag(t) => t.as_str().to_string(),
    }
}

fn render_op(op: CmpOp) -> &'static str {
    match op {
        CmpOp::Eq => "=",
        CmpOp::Ne => "!=",
        CmpOp::Lt => "<",
        CmpOp::Le => "<=",
        CmpOp::Gt => ">",
        CmpOp::Ge => ">=",
        CmpOp::Contains => "contains",
    }
}

/// Renders a rule in the file grammar.
pub fn render_rule(r: &Rule) -> String {
    let conds: Vec<String> = r
        .conditions
        .iter()
        .map(|c| format!("{} {} {}", c.ident, render_op(c.op), render_literal(&c.value)))
        .collect();
    let op = match r.action {
        ActionKind::Assign => "=",
        ActionKind::Increment => "+=",
    };
    format!(
        "- when {} then {} {} {} : {}",
        conds.join(" and "),
        r.target,
        op,
        r.expr,
        r.explanation
    )
}
