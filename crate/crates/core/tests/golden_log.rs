//! The level-1 session log in external-stub mode, byte for byte.
//! Set `PEAR_UPDATE_GOLDEN=1` to rewrite the golden file.

use std::path::PathBuf;

use pear_core::demo::{external_stub_session, expected_trajectory, STUB_COMMAND_SHOWN};
use pear_core::orchestrator::Stage;
use pear_core::session_log::replay;

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/level1_session.log")
}

#[test]
fn level_one_log_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let out = external_stub_session(dir.path()).unwrap();
    assert_eq!(out.state.stage, Stage::Done, "{}", out.log_text);

    let path = golden_path();
    if std::env::var_os("PEAR_UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, &out.log_text).unwrap();
    }
    let golden = std::fs::read_to_string(&path).expect("golden file present");
    assert!(out.log_text == golden, "log differs from {}:\n{}", path.display(), out.log_text);
}

#[test]
fn golden_log_shows_the_batch_command() {
    let golden = std::fs::read_to_string(golden_path()).unwrap();
    assert!(golden.contains(&format!("{STUB_COMMAND_SHOWN} -batch \"driver('")));
    assert!(golden.contains("A driver file exists in the current working directory, it will be overwritten."));
    assert!(!golden.contains("/tmp/"));
    let r = replay(&golden).unwrap();
    assert_eq!(r.reconstruction_params, expected_trajectory()[..4].to_vec());
}
