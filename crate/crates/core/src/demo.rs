//! The bundled demo session: a recorded level-1 session, the scripted model
//! that reproduces it and the parameters each reconstruction should use.

use std::fs;
use std::io;
use std::os::unix::fs::PermissionsExt;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use crate::executor::{ExecMode, DRIVER_NAME};
use crate::kb::KnowledgeBase;
use crate::llm::{FaultConfig, Gateway, Matcher, ScriptedProvider};
use crate::orchestrator::{run_session, NullSink, ScriptedReplies, SessionDeps, SessionError, SessionOutcome, SessionSettings};
use crate::params::{parse_params, Field, FieldValue, ReconstructionParams};
use crate::session_log::{replay, FixedClock, Redactor};

/// A recorded session, kept verbatim.
pub const RECORDED_LOG: &str = include_str!("../tests/fixtures/casestudy_session.log");

pub const DEMO_MODEL: &str = "gpt-4o-mini";

/// The recorded fourth feedback round reports nothing wrong, yet the blur is
/// raised once more. No rule covers that, so the scripted model carries it.
pub fn round_four_entry() -> (Matcher, String) {
    (
        Matcher::AllOf(vec![
            Matcher::Contains("### Quality report".into()),
            Matcher::Contains("\"diff_pattern_blur\": 1.5".into()),
        ]),
        r#"{"explanation": "* Increase the standard deviation of the gaussian kernel for detector blurring by 0.5.", "changes": {"diff_pattern_blur": 2.0}}"#
            .into(),
    )
}

/// The reference model plus the fourth-round entry.
pub fn demo_provider(faults: FaultConfig) -> ScriptedProvider {
    let (m, r) = round_four_entry();
    ScriptedProvider::new(vec![(m, r)])
        .with_fallback(Arc::new(crate::llm::ReferenceModel))
        .with_faults(faults)
}

pub fn demo_gateway() -> Gateway {
    Gateway::new(Arc::new(demo_provider(FaultConfig::none())), DEMO_MODEL)
}

/// Every user reply of the recorded session, in order.
pub fn recorded_replies() -> Vec<String> {
    replay(RECORDED_LOG).expect("bundled log parses").replies
}

/// Parameters of the recorded first reconstruction.
pub fn recorded_initial_params() -> ReconstructionParams {
    replay(RECORDED_LOG).expect("bundled log parses").param_blocks[0].clone()
}

/// Parameters each reconstruction should use, then the final update: the
/// first recorded block with only the changes the session states applied.
pub fn expected_trajectory() -> Vec<ReconstructionParams> {
    let steps: [&[(Field, FieldValue)]; 5] = [
        &[(Field::NumberOfProbeModes, FieldValue::Int(6))],
        &[(Field::LayerRegularizationCoefficient, FieldValue::Real(0.3))],
        &[(Field::DiffPatternBlur, FieldValue::Real(1.5))],
        &[(Field::UpdateBatchSize, FieldValue::Int(256))],
        &[(Field::DiffPatternBlur, FieldValue::Real(2.0))],
    ];
    let mut p = recorded_initial_params();
    let mut out = vec![p.clone()];
    for changes in steps {
        for (f, v) in changes {
            p.set(*f, v.clone()).expect("kinds match");
        }
        out.push(p.clone());
    }
    // the edit happens inside the fourth round; drop the pre-edit state
    out.remove(3);
    out
}

/// The first recorded block, parsed from the fixture copy as a check.
pub fn recorded_first_block() -> ReconstructionParams {
    parse_params(include_str!("../tests/fixtures/recon_1.json")).expect("fixture parses")
}

/// Where the stub session's private paths appear in its log.
pub const HIDDEN_ROOT: &str = "/Modified/to/Hide/User/Info";
pub const STUB_COMMAND_SHOWN: &str = "/usr/local/bin/matlab";
pub const STUB_START: &str = "20240913-00:02:56";

const STUB_OUTPUT: &str = "\
[init] : Preparing paths.
[init] : Preparing initial guess.
[init] : Preparing data using matlab APS data preparation.
[init] : Finished data preparation and initialization.
[ptycho] : Calling engine GPU_MS
[ptycho] : Elapsed time for engine GPU_MS: 401.5 s
Elapsed time is 438.322446 seconds.
";

/// Failed setup of the stub session.
#[derive(Debug, thiserror::Error)]
pub enum StubError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Session(#[from] SessionError),
}

/// Replays the recorded replies at level 1 against an external engine that
/// is a shell stub printing fixed output, under `root`. The clock is fixed
/// and the paths under `root` are redacted, so the log is the same on every
/// machine.
pub fn external_stub_session(root: &Path) -> Result<SessionOutcome, StubError> {
    let bin = root.join("bin");
    let scripts = root.join("ptycho");
    fs::create_dir_all(&bin)?;
    fs::create_dir_all(&scripts)?;
    let command = bin.join("matlab");
    fs::write(&command, format!("#!/bin/sh\ncat <<'EOF'\n{STUB_OUTPUT}EOF\n"))?;
    fs::set_permissions(&command, fs::Permissions::from_mode(0o755))?;
    // a stale driver, so the overwrite notice shows up
    fs::write(scripts.join(DRIVER_NAME), "% old driver\n")?;

    let data_dir = format!("{HIDDEN_ROOT}/");
    let mut settings = SessionSettings::new(1, DEMO_MODEL, &data_dir, &scripts);
    settings.exec = ExecMode::External {
        command: command.display().to_string(),
        timeout: Duration::from_secs(30),
    };
    settings.user_name = "User".into();
    settings.computer_name = "lamda".into();
    settings.session_id = "golden".into();

    let root_text = root.display().to_string();
    let redactor = Redactor::default()
        .with_literal_first(&root_text, HIDDEN_ROOT)
        .with_literal_first(&command.display().to_string(), STUB_COMMAND_SHOWN);
    let gateway = demo_gateway();
    let kb = KnowledgeBase::demo_named("neurips_demo");
    let deps = SessionDeps {
        gateway: &gateway,
        kb: &kb,
        clock: Arc::new(FixedClock::parse(STUB_START, 1).expect("valid start")),
        redactor,
        cancel: Default::default(),
    };
    Ok(run_session(&settings, deps, &mut ScriptedReplies::new(recorded_replies()), &NullSink)?)
}
