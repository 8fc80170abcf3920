//! Robustness experiment: seeded hypothetical problems, a simulated user and
//! the single-agent and multi-agent pipelines run against a fault-injecting
//! model.
//!
//! Ground truth for a problem is computed straight from its sampled values
//! and the rule book, without going through any agent. A trial's script is
//! then read back through the template and compared field by field.

mod report;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::feedback::QUALITY_QUESTIONS;
use crate::agents::questions::CANONICAL;
use crate::agents::single::single_agent_script;
use crate::agents::{AgentContext, ChatTurn};
use crate::executor::template::{extract_values, matlab_literal};
use crate::executor::{ExecMode, MockScenario};
use crate::kb::KnowledgeBase;
use crate::llm::{FaultConfig, FaultKind, Gateway, ScriptedProvider};
use crate::orchestrator::{
    run_session, NullSink, ReplyError, SessionDeps, SessionSettings, CONFIRM_PROMPT, CONTINUE_PROMPT,
};
use crate::params::{Field, ReconstructionParams};
use crate::rulebook::{ExperimentFacts, RuleSet};
use crate::session_log::{FixedClock, Redactor};

pub use report::{report_csv, report_rows, report_text, write_reports, ReportRow};

pub const BEAM_ENERGIES: [f64; 3] = [80.0, 200.0, 300.0];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("the simulated user does not know the question {0:?}")]
    UnknownQuestion(String),
}

/// One sampled experiment with its expected parameters and the user's answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypotheticalProblem {
    pub id: u32,
    pub facts: ExperimentFacts,
    pub ground_truth: ReconstructionParams,
    /// Question id to answer text, one entry per built-in question.
    pub answers: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    SingleAgent,
    MultiAgent,
}

impl Mode {
    pub const ALL: [Mode; 2] = [Mode::SingleAgent, Mode::MultiAgent];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::SingleAgent => "single_agent",
            Mode::MultiAgent => "multi_agent",
        }
    }

    /// Accepts `single`, `multi` and the full names.
    pub fn from_name(s: &str) -> Option<Mode> {
        match s {
            "single" | "single_agent" => Some(Mode::SingleAgent),
            "multi" | "multi_agent" => Some(Mode::MultiAgent),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Success,
    Mistake,
    Error,
}

impl Classification {
    pub fn as_str(self) -> &'static str {
        match self {
            Classification::Success => "success",
            Classification::Mistake => "mistake",
            Classification::Error => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub problem_id: u32,
    pub mode: Mode,
    pub model: String,
    pub fault_rate: f64,
    pub classification: Classification,
    /// Fields whose value differs from the ground truth; only for mistakes.
    pub mismatched: Vec<Field>,
    /// Model replies requested, retries included.
    pub attempts: u64,
    pub wall_secs: f64,
    /// Why no usable script came out, for errors.
    pub cause: Option<String>,
}

// ---------------------------------------------------------------------------
// Problems

fn pick<T: Copy>(rng: &mut ChaCha8Rng, xs: &[T]) -> T {
    *xs.choose(rng).expect("non-empty choice")
}

/// `v / 10^places` written with exactly `places` decimals.
fn decimal(v: u64, places: u32) -> String {
    let scale = 10u64.pow(places);
    format!("{}.{:0width$}", v / scale, v % scale, width = places as usize)
}

/// Draws `n` problems; equal seeds give equal lists.
pub fn generate_problems(n: usize, seed: u64, rules: &RuleSet) -> Vec<HypotheticalProblem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (1..=n as u32).map(|id| sample_problem(id, &mut rng, rules)).collect()
}

fn sample_problem(id: u32, rng: &mut ChaCha8Rng, rules: &RuleSet) -> HypotheticalProblem {
    let mut p = ReconstructionParams::default();
    let mut answers = BTreeMap::new();
    let mut say = |k: &str, v: String| {
        answers.insert(k.to_string(), v);
    };

    let scan = rng.gen_range(1..=999u64);
    p.data_directory = format!("/data/ptycho/S{scan:05}/");
    p.scan_number = scan;
    say("scan_number", pick(rng, &["{}", "scan {}", "It is {}."]).replace("{}", &scan.to_string()));

    let energy = pick(rng, &BEAM_ENERGIES);
    p.beam_energy = energy;
    say("beam_energy", pick(rng, &["{}", "{} keV"]).replace("{}", &format!("{energy}")));

    let radius = decimal(rng.gen_range(800..=4000), 2);
    p.radius_bright_field = radius.parse().expect("decimal");
    say("radius_bright_field", radius);

    let angle = decimal(rng.gen_range(100..=350), 1);
    p.convergence_angle = angle.parse().expect("decimal");
    say("convergence_angle", format!("{angle} mrad"));

    let detector = pick(rng, &[128u64, 256]);
    p.size_of_diffraction_patterns = detector;
    say("detector_size", detector.to_string());

    if rng.gen_bool(0.25) {
        p.use_external_object = true;
        p.initial_object_path = format!("/data/recon/S{scan:05}/object_Niter500.mat");
        say("initial_object", format!("yes, use {}", p.initial_object_path));
    } else {
        say("initial_object", "no".into());
    }

    if rng.gen_bool(0.5) {
        p.use_external_probe = true;
        p.initial_probe_file = format!("/data/recon/S{scan:05}/Niter1000.mat");
        p.defocus = 0.0;
        say("initial_probe", format!("load an existing probe from {}", p.initial_probe_file));
    } else {
        let defocus = rng.gen_range(-20..=20i64) * 10;
        p.defocus = defocus as f64;
        say("initial_probe", format!("use the ideal model with a defocus of {defocus} angstroms"));
    }

    let accurate = rng.gen_bool(0.5);
    say("probe_accuracy", if accurate { "yes" } else { "no" }.into());

    let nx = rng.gen_range(64..=256u64);
    let ny = if rng.gen_bool(0.5) { nx } else { rng.gen_range(64..=256u64) };
    let step = decimal(rng.gen_range(1000..=5000), 4);
    p.grid_scan_positions = true;
    p.use_external_positions = false;
    p.number_scan_points_x = nx;
    p.number_scan_points_y = ny;
    p.scan_step_size_x = step.parse().expect("decimal");
    p.scan_step_size_y = p.scan_step_size_x;
    say("scan_positions", format!("{nx} x {ny}, step size is {step} A"));

    let modes = rng.gen_range(1..=8u64);
    p.number_of_probe_modes = modes;
    say("probe_modes", modes.to_string());

    let gpu = rng.gen_range(0..=3u64);
    p.gpu_id = gpu;
    say("gpu", gpu.to_string());

    let total = nx * ny;
    say(
        "total_patterns",
        if rng.gen_bool(0.5) { format!("{nx} x {ny}") } else { total.to_string() },
    );

    let drift = rng.gen_bool(0.5);
    say("drift", if drift { "yes" } else { "no" }.into());

    let thickness = if rng.gen_bool(0.2) { 0 } else { rng.gen_range(5..=300u64) };
    p.object_thickness = thickness as f64;
    say("thickness", pick(rng, &["{}", "about {} angstroms"]).replace("{}", &thickness.to_string()));

    let facts = ExperimentFacts {
        total_patterns: total,
        beam_energy: energy,
        initial_probe_accurate: accurate,
        sample_drifted: drift,
        sample_thickness: thickness as f64,
    };
    let ground_truth = rules.recommend_initial(&facts, &p).params;
    HypotheticalProblem {
        id,
        facts,
        ground_truth,
        answers,
    }
}

// ---------------------------------------------------------------------------
// Simulated user

/// Answers a prompt of the workflow the way the problem's user would.
pub fn simulate_user(problem: &HypotheticalProblem, question: &str) -> Result<String, EvalError> {
    let q = question.trim();
    if let Some((id, _)) = CANONICAL.iter().find(|(_, text)| text.trim() == q) {
        return Ok(problem.answers.get(*id).cloned().unwrap_or_default());
    }
    if q == CONFIRM_PROMPT {
        return Ok("lgtm".into());
    }
    if q == CONTINUE_PROMPT {
        return Ok("no".into());
    }
    if let Some(i) = QUALITY_QUESTIONS.iter().position(|t| *t == q) {
        // the first reconstruction looks fine to this user
        return Ok(if i == 0 { "yes" } else { "no" }.into());
    }
    Err(EvalError::UnknownQuestion(q.to_string()))
}

// ---------------------------------------------------------------------------
// Classification

/// Compares a script against the rendering of `ground_truth`.
///
/// A script that does not follow the template is an error; one that does but
/// carries a different value anywhere is a mistake.
pub fn classify(script: &str, ground_truth: &ReconstructionParams, template: &str) -> (Classification, Vec<Field>) {
    let Ok(values) = extract_values(script, template) else {
        return (Classification::Error, Vec::new());
    };
    let mut mismatched = Vec::new();
    for (field, seen) in &values {
        let want = matlab_literal(&ground_truth.get(*field));
        if seen.iter().any(|v| matlab_literal(v) != want) {
            mismatched.push(*field);
        }
    }
    if mismatched.is_empty() {
        (Classification::Success, mismatched)
    } else {
        (Classification::Mistake, mismatched)
    }
}

// ---------------------------------------------------------------------------
// Trials

/// Shared settings of a batch of trials.
#[derive(Debug, Clone)]
pub struct TrialConfig {
    pub model: String,
    pub faults: FaultConfig,
}

fn gateway(cfg: &TrialConfig) -> Gateway {
    let provider = ScriptedProvider::reference().with_faults(cfg.faults.clone());
    Gateway::new(Arc::new(provider), cfg.model.clone()).without_records()
}

/// Runs one problem through one pipeline and classifies the script.
pub fn run_trial(problem: &HypotheticalProblem, mode: Mode, cfg: &TrialConfig, kb: &KnowledgeBase) -> TrialOutcome {
    let mut o = run_trial_with(problem, mode, &gateway(cfg), kb);
    o.fault_rate = cfg.faults.rate;
    o
}

/// [`run_trial`] against a prepared gateway; the fault rate is left at 0.
pub fn run_trial_with(problem: &HypotheticalProblem, mode: Mode, gw: &Gateway, kb: &KnowledgeBase) -> TrialOutcome {
    let started = Instant::now();
    let (script, cause) = match mode {
        Mode::SingleAgent => single_trial(problem, gw, kb),
        Mode::MultiAgent => multi_trial(problem, gw, kb),
    };
    let (classification, mismatched, cause) = match (script, kb.script_template()) {
        (Some(s), Ok(t)) => {
            let (c, m) = classify(&s, &problem.ground_truth, &format!("{}\n", t.trim_end()));
            let cause = (c == Classification::Error).then(|| "the script does not follow the template".to_string());
            (c, m, cause)
        }
        (None, _) => (Classification::Error, Vec::new(), cause),
        (Some(_), Err(e)) => (Classification::Error, Vec::new(), Some(e.to_string())),
    };
    TrialOutcome {
        problem_id: problem.id,
        mode,
        model: gw.model.clone(),
        fault_rate: 0.0,
        classification,
        mismatched,
        attempts: gw.ledger().attempts,
        wall_secs: started.elapsed().as_secs_f64(),
        cause,
    }
}

fn single_trial(problem: &HypotheticalProblem, gw: &Gateway, kb: &KnowledgeBase) -> (Option<String>, Option<String>) {
    let rules = match kb.rules() {
        Ok(r) => r,
        Err(e) => return (None, Some(e.to_string())),
    };
    let ctx = AgentContext {
        gateway: gw,
        kb,
        rules: &rules,
    };
    let mut turns = Vec::new();
    for (_, text) in CANONICAL {
        match simulate_user(problem, text) {
            Ok(a) => turns.extend([ChatTurn::pear(text), ChatTurn::user(a)]),
            Err(e) => return (None, Some(e.to_string())),
        }
    }
    match single_agent_script(&ctx, &turns, &problem.ground_truth.data_directory) {
        Ok(s) => (Some(s), None),
        Err(e) => (None, Some(e.to_string())),
    }
}

fn multi_trial(problem: &HypotheticalProblem, gw: &Gateway, kb: &KnowledgeBase) -> (Option<String>, Option<String>) {
    let dir = match tempfile::tempdir() {
        Ok(d) => d,
        Err(e) => return (None, Some(e.to_string())),
    };
    let mut settings = SessionSettings::new(1, &gw.model, &problem.ground_truth.data_directory, dir.path());
    settings.exec = ExecMode::Mock(MockScenario::default());
    settings.max_rounds = 1;
    settings.session_id = format!("eval_{}", problem.id);
    let deps = SessionDeps {
        gateway: gw,
        kb,
        clock: Arc::new(FixedClock::constant(chrono::NaiveDateTime::default())),
        redactor: Redactor::none(),
        cancel: Default::default(),
    };
    let mut user = |prompt: &str| simulate_user(problem, prompt).map_err(|_| ReplyError::Closed);
    match run_session(&settings, deps, &mut user, &NullSink) {
        Ok(out) => match out.scripts.first() {
            Some(path) => match std::fs::read_to_string(path) {
                Ok(s) => (Some(s), None),
                Err(e) => (None, Some(e.to_string())),
            },
            None => (None, Some(out.state.abort_cause.unwrap_or_else(|| "no script was generated".into()))),
        },
        Err(e) => (None, Some(e.to_string())),
    }
}

// ---------------------------------------------------------------------------
// Batches

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub n: usize,
    pub seed: u64,
    pub modes: Vec<Mode>,
    pub fault_rates: Vec<f64>,
    pub kinds: Vec<FaultKind>,
    pub model: String,
}

impl EvalConfig {
    pub fn new(n: usize, seed: u64) -> Self {
        Self {
            n,
            seed,
            modes: Mode::ALL.to_vec(),
            fault_rates: vec![0.0],
            kinds: FaultKind::ALL.to_vec(),
            model: crate::demo::DEMO_MODEL.into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalRun {
    pub problems: Vec<HypotheticalProblem>,
    /// Ordered by mode, fault rate and problem id.
    pub outcomes: Vec<TrialOutcome>,
}

/// Runs every (problem, mode, fault rate) trial in parallel. The same fault
/// seed is used at every rate, so a higher rate only adds faults to the
/// replies a lower rate saw.
pub fn run_eval(cfg: &EvalConfig, kb: &KnowledgeBase) -> Result<EvalRun, crate::kb::KbError> {
    let rules = kb.rules()?;
    let problems = generate_problems(cfg.n, cfg.seed, &rules);
    let mut jobs = Vec::new();
    for &mode in &cfg.modes {
        for &rate in &cfg.fault_rates {
            for p in &problems {
                jobs.push((mode, rate, p));
            }
        }
    }
    let mut outcomes: Vec<TrialOutcome> = jobs
        .into_par_iter()
        .map(|(mode, rate, p)| {
            let tc = TrialConfig {
                model: cfg.model.clone(),
                faults: FaultConfig {
                    rate,
                    kinds: cfg.kinds.clone(),
                    seed: cfg.seed,
                },
            };
            run_trial(p, mode, &tc, kb)
        })
        .collect();
    outcomes.sort_by(|a, b| {
        (a.mode, a.fault_rate, a.problem_id)
            .partial_cmp(&(b.mode, b.fault_rate, b.problem_id))
            .expect("finite fault rates")
    });
    Ok(EvalRun { problems, outcomes })
}
