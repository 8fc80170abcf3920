//! Reconstruction parameter record.
//!
//! [`ReconstructionParams`] is the value every agent exchanges. It has a fixed
//! set of 28 fields whose order is significant: the canonical JSON text lists
//! them from `data_directory` to `gpu_id`, four-space indented, and that text
//! is what users see and confirm before a script is generated.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// The full set of parameters handed to the reconstruction script.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionParams {
    pub data_directory: String,
    pub scan_number: u64,
    /// keV
    pub beam_energy: f64,
    /// pixels
    pub radius_bright_field: f64,
    /// mrad
    pub convergence_angle: f64,
    /// pixels per side
    pub size_of_diffraction_patterns: u64,
    pub use_external_object: bool,
    pub initial_object_path: String,
    pub use_external_probe: bool,
    pub initial_probe_file: String,
    /// angstroms
    pub defocus: f64,
    pub use_external_positions: bool,
    pub initial_position_file: String,
    pub grid_scan_positions: bool,
    /// angstroms
    pub scan_step_size_x: f64,
    /// angstroms
    pub scan_step_size_y: f64,
    pub number_scan_points_x: u64,
    pub number_scan_points_y: u64,
    pub number_of_iterations: u64,
    pub update_batch_size: u64,
    pub number_of_probe_modes: u64,
    pub position_correction: bool,
    pub multislice_ptycho: bool,
    /// angstroms
    pub object_thickness: f64,
    pub number_of_layers: u64,
    pub layer_regularization_coefficient: f64,
    /// Gaussian sigma in pixels
    pub diff_pattern_blur: f64,
    pub gpu_id: u64,
}

impl Default for ReconstructionParams {
    fn default() -> Self {
        Self {
            data_directory: String::new(),
            scan_number: 1,
            beam_energy: 300.0,
            radius_bright_field: 1.0,
            convergence_angle: 1.0,
            size_of_diffraction_patterns: 128,
            use_external_object: false,
            initial_object_path: String::new(),
            use_external_probe: false,
            initial_probe_file: String::new(),
            defocus: 0.0,
            use_external_positions: false,
            initial_position_file: String::new(),
            grid_scan_positions: true,
            scan_step_size_x: 1.0,
            scan_step_size_y: 1.0,
            number_scan_points_x: 1,
            number_scan_points_y: 1,
            number_of_iterations: 50,
            update_batch_size: 1,
            number_of_probe_modes: 1,
            position_correction: false,
            multislice_ptycho: false,
            object_thickness: 0.0,
            number_of_layers: 1,
            layer_regularization_coefficient: 0.0,
            diff_pattern_blur: 0.0,
            gpu_id: 0,
        }
    }
}

/// Value type of a parameter field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FieldKind {
    Text,
    Int,
    Real,
    Bool,
}

/// A dynamically typed field value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldValue {
    Bool(bool),
    Int(u64),
    Real(f64),
    Text(String),
}

impl FieldValue {
    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            FieldValue::Int(v) => Some(v as f64),
            FieldValue::Real(v) => Some(v),
            _ => None,
        }
    }

    /// JSON literal used in the canonical text.
    pub fn to_json_literal(&self) -> String {
        match self {
            FieldValue::Bool(b) => b.to_string(),
            FieldValue::Int(v) => v.to_string(),
            FieldValue::Real(v) => format_real(*v),
            FieldValue::Text(s) => serde_json::to_string(s).expect("string serialization"),
        }
    }

    /// Converts a JSON value into a value of `kind`, without coercing strings
    /// to numbers. Integers are accepted for real fields.
    pub fn from_json(kind: FieldKind, value: &Value) -> Option<FieldValue> {
        match kind {
            FieldKind::Text => value.as_str().map(|s| FieldValue::Text(s.to_string())),
            FieldKind::Bool => value.as_bool().map(FieldValue::Bool),
            FieldKind::Int => value.as_u64().map(FieldValue::Int),
            FieldKind::Real => {
                if value.is_number() {
                    value.as_f64().filter(|v| v.is_finite()).map(FieldValue::Real)
                } else {
                    None
                }
            }
        }
    }
}

impl fmt::Display for FieldValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldValue::Text(s) => f.write_str(s),
            other => f.write_str(&other.to_json_literal()),
        }
    }
}

/// Formats a real the way the canonical text does: shortest round-trip
/// representation, integral values without a fractional part.
pub fn format_real(v: f64) -> String {
    if v == 0.0 {
        // folds -0 into 0
        return "0".to_string();
    }
    format!("{v}")
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("field `{field}` expects a {expected:?} value, got {got:?}")]
pub struct FieldTypeError {
    pub field: &'static str,
    pub expected: FieldKind,
    pub got: FieldValue,
}

trait FromFieldValue: Sized {
    fn from_field_value(field: Field, value: FieldValue) -> Result<Self, FieldTypeError>;
}

fn type_error(field: Field, value: FieldValue) -> FieldTypeError {
    FieldTypeError {
        field: field.name(),
        expected: field.kind(),
        got: value,
    }
}

impl FromFieldValue for String {
    fn from_field_value(field: Field, value: FieldValue) -> Result<Self, FieldTypeError> {
        match value {
            FieldValue::Text(s) => Ok(s),
            other => Err(type_error(field, other)),
        }
    }
}

impl FromFieldValue for bool {
    fn from_field_value(field: Field, value: FieldValue) -> Result<Self, FieldTypeError> {
        match value {
            FieldValue::Bool(b) => Ok(b),
            other => Err(type_error(field, other)),
        }
    }
}

impl FromFieldValue for u64 {
    fn from_field_value(field: Field, value: FieldValue) -> Result<Self, FieldTypeError> {
        match value {
            FieldValue::Int(v) => Ok(v),
            other => Err(type_error(field, other)),
        }
    }
}

impl FromFieldValue for f64 {
    fn from_field_value(field: Field, value: FieldValue) -> Result<Self, FieldTypeError> {
        match value {
            FieldValue::Real(v) => Ok(v),
            FieldValue::Int(v) => Ok(v as f64),
            other => Err(type_error(field, other)),
        }
    }
}

impl From<String> for FieldValue {
    fn from(v: String) -> Self {
        FieldValue::Text(v)
    }
}

impl From<bool> for FieldValue {
    fn from(v: bool) -> Self {
        FieldValue::Bool(v)
    }
}

impl From<u64> for FieldValue {
    fn from(v: u64) -> Self {
        FieldValue::Int(v)
    }
}

impl From<f64> for FieldValue {
    fn from(v: f64) -> Self {
        FieldValue::Real(v)
    }
}

macro_rules! field_table {
    ($($variant:ident => $name:ident : $kind:ident),+ $(,)?) => {
        /// Names one field of [`ReconstructionParams`].
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum Field {
            $($variant),+
        }

        impl Field {
            /// Every field, in canonical order.
            pub const ALL: [Field; 28] = [$(Field::$variant),+];

            pub fn name(self) -> &'static str {
                match self {
                    $(Field::$variant => stringify!($name)),+
                }
            }

            pub fn kind(self) -> FieldKind {
                match self {
                    $(Field::$variant => FieldKind::$kind),+
                }
            }

            pub fn from_name(name: &str) -> Option<Field> {
                match name {
                    $(stringify!($name) => Some(Field::$variant),)+
                    _ => None,
                }
            }
        }

        impl ReconstructionParams {
            pub fn get(&self, field: Field) -> FieldValue {
                match field {
                    $(Field::$variant => FieldValue::from(self.$name.clone()),)+
                }
            }

            /// Assigns one field. The value must have the field's kind; an
            /// integer is accepted for a real field.
            pub fn set(&mut self, field: Field, value: FieldValue) -> Result<(), FieldTypeError> {
                match field {
                    $(Field::$variant => {
                        self.$name = FromFieldValue::from_field_value(field, value)?;
                    })+
                }
                Ok(())
            }
        }
    };
}

field_table! {
    DataDirectory => data_directory: Text,
    ScanNumber => scan_number: Int,
    BeamEnergy => beam_energy: Real,
    RadiusBrightField => radius_bright_field: Real,
    ConvergenceAngle => convergence_angle: Real,
    SizeOfDiffractionPatterns => size_of_diffraction_patterns: Int,
    UseExternalObject => use_external_object: Bool,
    InitialObjectPath => initial_object_path: Text,
    UseExternalProbe => use_external_probe: Bool,
    InitialProbeFile => initial_probe_file: Text,
    Defocus => defocus: Real,
    UseExternalPositions => use_external_positions: Bool,
    InitialPositionFile => initial_position_file: Text,
    GridScanPositions => grid_scan_positions: Bool,
    ScanStepSizeX => scan_step_size_x: Real,
    ScanStepSizeY => scan_step_size_y: Real,
    NumberScanPointsX => number_scan_points_x: Int,
    NumberScanPointsY => number_scan_points_y: Int,
    NumberOfIterations => number_of_iterations: Int,
    UpdateBatchSize => update_batch_size: Int,
    NumberOfProbeModes => number_of_probe_modes: Int,
    PositionCorrection => position_correction: Bool,
    MultislicePtycho => multislice_ptycho: Bool,
    ObjectThickness => object_thickness: Real,
    NumberOfLayers => number_of_layers: Int,
    LayerRegularizationCoefficient => layer_regularization_coefficient: Real,
    DiffPatternBlur => diff_pattern_blur: Real,
    GpuId => gpu_id: Int,
}

impl Field {
    /// Upper bound used to saturate increments.
    pub fn upper_bound(self) -> Option<f64> {
        match self {
            Field::LayerRegularizationCoefficient => Some(1.0),
            _ => None,
        }
    }

    /// Lower bound used to saturate decrements.
    pub fn lower_bound(self) -> f64 {
        match self {
            Field::ScanNumber
            | Field::SizeOfDiffractionPatterns
            | Field::NumberScanPointsX
            | Field::NumberScanPointsY
            | Field::NumberOfIterations
            | Field::UpdateBatchSize
            | Field::NumberOfProbeModes
            | Field::NumberOfLayers => 1.0,
            Field::Defocus => f64::MIN,
            _ => 0.0,
        }
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

// ---------------------------------------------------------------------------
// Validation

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub field: String,
    pub message: String,
    pub severity: Severity,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn from_issues(issues: Vec<ValidationIssue>) -> Self {
        let ok = !issues.iter().any(|i| i.severity == Severity::Error);
        Self { ok, issues }
    }

    pub fn errors(&self) -> impl Iterator<Item = &ValidationIssue> {
        self.issues.iter().filter(|i| i.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &ValidationIssue> {
        self.issues.iter().filter(|i| i.severity == Severity::Warning)
    }

    /// Names of fields with at least one error.
    pub fn error_fields(&self) -> Vec<&str> {
        let mut out: Vec<&str> = self.errors().map(|i| i.field.as_str()).collect();
        out.dedup();
        out
    }

    pub fn push(&mut self, issue: ValidationIssue) {
        if issue.severity == Severity::Error {
            self.ok = false;
        }
        self.issues.push(issue);
    }
}

fn error(field: Field, message: impl Into<String>) -> ValidationIssue {
    ValidationIssue {
        field: field.name().to_string(),
        message: message.into(),
        severity: Severity::Error,
    }
}

fn warning(field: Field, message: impl Into<String>) -> ValidationIssue {
    ValidationIssue {
        field: field.name().to_string(),
        message: message.into(),
        severity: Severity::Warning,
    }
}

/// Checks every record invariant and reports all violations.
pub fn validate(p: &ReconstructionParams) -> ValidationReport {
    let mut issues = Vec::new();

    let positive_ints = [
        (Field::ScanNumber, p.scan_number),
        (Field::SizeOfDiffractionPatterns, p.size_of_diffraction_patterns),
        (Field::NumberScanPointsX, p.number_scan_points_x),
        (Field::NumberScanPointsY, p.number_scan_points_y),
        (Field::NumberOfIterations, p.number_of_iterations),
        (Field::UpdateBatchSize, p.update_batch_size),
        (Field::NumberOfProbeModes, p.number_of_probe_modes),
        (Field::NumberOfLayers, p.number_of_layers),
    ];
    for (field, v) in positive_ints {
        if v == 0 {
            issues.push(error(field, "must be a positive integer"));
        }
    }

    let positive_reals = [
        (Field::BeamEnergy, p.beam_energy),
        (Field::RadiusBrightField, p.radius_bright_field),
        (Field::ConvergenceAngle, p.convergence_angle),
        (Field::ScanStepSizeX, p.scan_step_size_x),
        (Field::ScanStepSizeY, p.scan_step_size_y),
    ];
    for (field, v) in positive_reals {
        if !(v.is_finite() && v > 0.0) {
            issues.push(error(field, "must be a positive number"));
        }
    }

    for (field, v) in [
        (Field::ObjectThickness, p.object_thickness),
        (Field::DiffPatternBlur, p.diff_pattern_blur),
    ] {
        if !(v.is_finite() && v >= 0.0) {
            issues.push(error(field, "must be a non-negative number"));
        }
    }

    if !(p.layer_regularization_coefficient.is_finite()
        && (0.0..=1.0).contains(&p.layer_regularization_coefficient))
    {
        issues.push(error(
            Field::LayerRegularizationCoefficient,
            "must lie in [0, 1]",
        ));
    }

    let total = p.number_scan_points_x.saturating_mul(p.number_scan_points_y);
    if p.update_batch_size > total {
        issues.push(error(
            Field::UpdateBatchSize,
            format!("exceeds the number of scan points ({total})"),
        ));
    }

    if p.use_external_probe && p.initial_probe_file.trim().is_empty() {
        issues.push(error(
            Field::InitialProbeFile,
            "required when use_external_probe is true",
        ));
    }
    if p.use_external_object && p.initial_object_path.trim().is_empty() {
        issues.push(error(
            Field::InitialObjectPath,
            "required when use_external_object is true",
        ));
    }
    if p.use_external_positions && p.initial_position_file.trim().is_empty() {
        issues.push(error(
            Field::InitialPositionFile,
            "required when use_external_positions is true",
        ));
    }
    if !p.use_external_probe && !p.defocus.is_finite() {
        issues.push(error(
            Field::Defocus,
            "a finite defocus is required to build the probe from the ideal model",
        ));
    }

    if !p.multislice_ptycho {
        if p.number_of_layers != 1 {
            issues.push(error(
                Field::NumberOfLayers,
                "must be 1 when multislice_ptycho is false",
            ));
        }
        if p.layer_regularization_coefficient != 0.0 {
            issues.push(error(
                Field::LayerRegularizationCoefficient,
                "must be 0 when multislice_ptycho is false",
            ));
        }
    }

    if p.grid_scan_positions && p.use_external_positions {
        issues.push(error(
            Field::GridScanPositions,
            "grid_scan_positions and use_external_positions are mutually exclusive",
        ));
    }

    if p.diff_pattern_blur > 3.0 {
        issues.push(warning(Field::DiffPatternBlur, "unusually large (> 3 pixels)"));
    }
    if p.number_of_probe_modes > 12 {
        issues.push(warning(Field::NumberOfProbeModes, "unusually many probe modes (> 12)"));
    }
    if p.number_of_layers > 50 {
        issues.push(warning(Field::NumberOfLayers, "unusually many layers (> 50)"));
    }

    ValidationReport::from_issues(issues)
}

// ---------------------------------------------------------------------------
// Canonical text

/// Renders the canonical JSON text: canonical key order, four-space indent,
/// lowercase booleans, no trailing newline.
pub fn to_canonical_text(p: &ReconstructionParams) -> String {
    let mut out = String::from("{\n");
    for (i, field) in Field::ALL.iter().enumerate() {
        out.push_str("    \"");
        out.push_str(field.name());
        out.push_str("\": ");
        out.push_str(&p.get(*field).to_json_literal());
        if i + 1 < Field::ALL.len() {
            out.push(',');
        }
        out.push('\n');
    }
    out.push('}');
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("invalid JSON: {0}")]
    Json(String),
    #[error("expected a JSON object")]
    NotAnObject,
    #[error("{}", describe_keys(.missing, .unknown, .ill_typed))]
    Keys {
        missing: Vec<String>,
        unknown: Vec<String>,
        ill_typed: Vec<String>,
    },
}

impl ParseError {
    /// Every key named by the error.
    pub fn keys(&self) -> Vec<&str> {
        match self {
            ParseError::Keys {
                missing,
                unknown,
                ill_typed,
            } => missing
                .iter()
                .chain(unknown)
                .chain(ill_typed)
                .map(String::as_str)
                .collect(),
            _ => Vec::new(),
        }
    }
}

fn describe_keys(missing: &[String], unknown: &[String], ill_typed: &[String]) -> String {
    let mut parts = Vec::new();
    if !missing.is_empty() {
        parts.push(format!("missing keys: {}", missing.join(", ")));
    }
    if !unknown.is_empty() {
        parts.push(format!("unknown keys: {}", unknown.join(", ")));
    }
    if !ill_typed.is_empty() {
        parts.push(format!("ill-typed keys: {}", ill_typed.join(", ")));
    }
    parts.join("; ")
}

/// Parses a parameter JSON object. Unknown, missing and ill-typed keys are all
/// collected into a single error.
pub fn parse_params(text: &str) -> Result<ReconstructionParams, ParseError> {
    let value: Value = serde_json::from_str(text).map_err(|e| ParseError::Json(e.to_string()))?;
    let obj = value.as_object().ok_or(ParseError::NotAnObject)?;
    params_from_object(obj)
}

pub fn params_from_object(
    obj: &serde_json::Map<String, Value>,
) -> Result<ReconstructionParams, ParseError> {
    let mut missing = Vec::new();
    let mut ill_typed = Vec::new();
    let unknown: Vec<String> = obj
        .keys()
        .filter(|k| Field::from_name(k).is_none())
        .cloned()
        .collect();

    let mut params = ReconstructionParams::default();
    for field in Field::ALL {
        match obj.get(field.name()) {
            None => missing.push(field.name().to_string()),
            Some(v) => match FieldValue::from_json(field.kind(), v) {
                Some(fv) => params.set(field, fv).expect("kind checked"),
                None => ill_typed.push(field.name().to_string()),
            },
        }
    }

    if missing.is_empty() && unknown.is_empty() && ill_typed.is_empty() {
        Ok(params)
    } else {
        Err(ParseError::Keys {
            missing,
            unknown,
            ill_typed,
        })
    }
}

// ---------------------------------------------------------------------------
// Diff

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldChange {
    pub field: Field,
    pub old: FieldValue,
    pub new: FieldValue,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamDiff {
    pub changes: Vec<FieldChange>,
}

impl ParamDiff {
    pub fn is_empty(&self) -> bool {
        self.changes.is_empty()
    }

    pub fn len(&self) -> usize {
        self.changes.len()
    }

    pub fn fields(&self) -> Vec<Field> {
        self.changes.iter().map(|c| c.field).collect()
    }

    pub fn apply(&self, params: &mut ReconstructionParams) -> Result<(), FieldTypeError> {
        for change in &self.changes {
            params.set(change.field, change.new.clone())?;
        }
        Ok(())
    }
}

/// Lists the fields whose values differ, in canonical order.
pub fn diff(old: &ReconstructionParams, new: &ReconstructionParams) -> ParamDiff {
    let changes = Field::ALL
        .iter()
        .filter_map(|&field| {
            let (a, b) = (old.get(field), new.get(field));
            (a != b).then_some(FieldChange {
                field,
                old: a,
                new: b,
            })
        })
        .collect();
    ParamDiff { changes }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const RECON_1: &str = r#"{
    "data_directory": "/Modified/to/Hide/User/Info/",
    "scan_number": 31,
    "beam_energy": 300,
    "radius_bright_field": 23.25,
    "convergence_angle": 25,
    "size_of_diffraction_patterns": 128,
    "use_external_object": false,
    "initial_object_path": "",
    "use_external_probe": true,
    "initial_probe_file": "/Modified/to/Hide/User/Info/Niter1000.mat",
    "defocus": 0,
    "use_external_positions": false,
    "initial_position_file": "",
    "grid_scan_positions": true,
    "scan_step_size_x": 0.2546,
    "scan_step_size_y": 0.2546,
    "number_scan_points_x": 128,
    "number_scan_points_y": 128,
    "number_of_iterations": 50,
    "update_batch_size": 128,
    "number_of_probe_modes": 3,
    "position_correction": false,
    "multislice_ptycho": true,
    "object_thickness": 100,
    "number_of_layers": 10,
    "layer_regularization_coefficient": 0,
    "diff_pattern_blur": 1,
    "gpu_id": 1
}"#;

    fn recon_1() -> ReconstructionParams {
        parse_params(RECON_1).unwrap()
    }

    #[test]
    fn first_case_study_block_is_valid() {
        let report = validate(&recon_1());
        assert!(report.ok, "{report:?}");
        assert!(report.issues.is_empty());
    }

    #[test]
    fn batch_larger_than_scan_is_an_error() {
        let mut p = recon_1();
        p.update_batch_size = 20000;
        let report = validate(&p);
        assert!(!report.ok);
        assert_eq!(report.error_fields(), vec!["update_batch_size"]);
    }

    #[test]
    fn external_probe_needs_a_file() {
        let mut p = recon_1();
        p.use_external_probe = true;
        p.initial_probe_file.clear();
        let report = validate(&p);
        assert_eq!(report.error_fields(), vec!["initial_probe_file"]);
    }

    #[test]
    fn single_slice_constraints() {
        let mut p = recon_1();
        p.multislice_ptycho = false;
        p.layer_regularization_coefficient = 0.3;
        let report = validate(&p);
        assert_eq!(
            report.error_fields(),
            vec!["number_of_layers", "layer_regularization_coefficient"]
        );
    }

    #[test]
    fn grid_and_external_positions_conflict() {
        let mut p = recon_1();
        p.use_external_positions = true;
        p.initial_position_file = "/pos.mat".into();
        assert_eq!(validate(&p).error_fields(), vec!["grid_scan_positions"]);
    }

    #[test]
    fn warnings_do_not_fail_validation() {
        let mut p = recon_1();
        p.diff_pattern_blur = 3.5;
        p.number_of_probe_modes = 13;
        let report = validate(&p);
        assert!(report.ok);
        assert_eq!(report.warnings().count(), 2);
    }

    #[test]
    fn canonical_text_is_byte_identical_to_the_logged_block() {
        assert_eq!(to_canonical_text(&recon_1()), RECON_1);
    }

    #[test]
    fn blur_change_touches_one_line() {
        let a = recon_1();
        let mut b = a.clone();
        b.diff_pattern_blur = 1.5;
        let (ta, tb) = (to_canonical_text(&a), to_canonical_text(&b));
        let differing: Vec<_> = ta
            .lines()
            .zip(tb.lines())
            .filter(|(x, y)| x != y)
            .collect();
        assert_eq!(ta.lines().count(), tb.lines().count());
        assert_eq!(
            differing,
            vec![("    \"diff_pattern_blur\": 1,", "    \"diff_pattern_blur\": 1.5,")]
        );
    }

    #[test]
    fn reals_render_like_the_log() {
        assert_eq!(format_real(2.0), "2");
        assert_eq!(format_real(0.2546), "0.2546");
        assert_eq!(format_real(-0.0), "0");
        // the last logged block writes 2.0; both spellings parse to the same value
        let text = RECON_1.replace("\"diff_pattern_blur\": 1,", "\"diff_pattern_blur\": 2.0,");
        assert_eq!(parse_params(&text).unwrap().diff_pattern_blur, 2.0);
    }

    #[test]
    fn empty_object_lists_every_key() {
        let err = parse_params("{}").unwrap_err();
        let keys = err.keys();
        assert_eq!(keys.len(), 28);
        assert_eq!(keys[0], "data_directory");
        assert_eq!(keys[27], "gpu_id");
    }

    #[test]
    fn unknown_key_rejected() {
        let text = RECON_1.replacen('{', "{\n    \"foo\": 1,", 1);
        match parse_params(&text).unwrap_err() {
            ParseError::Keys {
                missing,
                unknown,
                ill_typed,
            } => {
                assert!(missing.is_empty() && ill_typed.is_empty());
                assert_eq!(unknown, vec!["foo"]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn numeric_strings_are_not_coerced() {
        let text = RECON_1.replace("\"scan_number\": 31", "\"scan_number\": \"31\"");
        assert_eq!(parse_params(&text).unwrap_err().keys(), vec!["scan_number"]);
        let text = RECON_1.replace("\"scan_number\": 31", "\"scan_number\": 31.5");
        assert_eq!(parse_params(&text).unwrap_err().keys(), vec!["scan_number"]);
    }

    #[test]
    fn second_block_has_six_probe_modes_and_diffs_in_one_field() {
        let second = RECON_1.replace("\"number_of_probe_modes\": 3", "\"number_of_probe_modes\": 6");
        let p2 = parse_params(&second).unwrap();
        assert_eq!(p2.number_of_probe_modes, 6);
        let d = diff(&recon_1(), &p2);
        assert_eq!(
            d.changes,
            vec![FieldChange {
                field: Field::NumberOfProbeModes,
                old: FieldValue::Int(3),
                new: FieldValue::Int(6),
            }]
        );
        assert!(diff(&p2, &p2).is_empty());
    }

    #[test]
    fn diff_applies_back() {
        let a = recon_1();
        let mut b = a.clone();
        b.update_batch_size = 256;
        b.diff_pattern_blur = 2.0;
        b.data_directory = "/elsewhere".into();
        let d = diff(&a, &b);
        assert_eq!(
            d.fields(),
            vec![Field::DataDirectory, Field::UpdateBatchSize, Field::DiffPatternBlur]
        );
        let mut c = a.clone();
        d.apply(&mut c).unwrap();
        assert_eq!(c, b);
    }

    #[test]
    fn set_rejects_wrong_kind() {
        let mut p = recon_1();
        assert!(p.set(Field::GpuId, FieldValue::Bool(true)).is_err());
        p.set(Field::BeamEnergy, FieldValue::Int(200)).unwrap();
        assert_eq!(p.beam_energy, 200.0);
    }
}
