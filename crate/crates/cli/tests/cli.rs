//! The `pear` binary: exit codes and subcommand output.

use std::io::Write;
use std::process::{Command, Output, Stdio};

use pear_core::demo::{expected_trajectory, recorded_replies};
use pear_core::session_log::replay;

fn pear(args: &[&str], stdin: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_pear"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn level_out_of_range_is_a_usage_error() {
    let out = pear(&["run", "--level", "3", "--mock"], "");
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--level"));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(code(&pear(&[], "")), 2);
    assert_eq!(code(&pear(&["frobnicate"], "")), 2);
    assert_eq!(code(&pear(&["run", "--level", "1"], "")), 2);
    assert_eq!(code(&pear(&["eval", "--mode", "triple"], "")), 2);
    assert_eq!(code(&pear(&["eval", "--fault-rate", "1.5", "--n", "1"], "")), 2);
    assert_eq!(code(&pear(&["--help"], "")), 0);
}

#[test]
fn demo_run_follows_the_recorded_session() {
    let dir = tempfile::tempdir().unwrap();
    let script_dir = dir.path().to_str().unwrap();
    let replies = recorded_replies().join("\n") + "\n";
    let out = pear(
        &["run", "--level", "1", "--kb", "demo", "--mock", "--script-dir", script_dir, "--host-label", "lab",
          "--base-dir", "/Modified/to/Hide/User/Info/"],
        &replies,
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains(" - Automation level: 1\n"));
    assert!(stdout.contains(" - Computer name: lab\n"));

    let log = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "log"))
        .unwrap();
    let r = replay(&std::fs::read_to_string(log).unwrap()).unwrap();
    assert_eq!(r.reconstruction_params, expected_trajectory()[..4].to_vec());
}

#[test]
fn closed_input_ends_the_session_with_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = pear(&["run", "--mock", "--script-dir", dir.path().to_str().unwrap()], "");
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stdout).contains("Session aborted: waiting for a reply"));
}

#[test]
fn fault_free_multi_agent_eval_succeeds_everywhere() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("report");
    let out = pear(
        &["eval", "--n", "100", "--seed", "7", "--fault-rate", "0", "--mode", "multi", "--out", out_dir.to_str().unwrap()],
        "",
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("eval_report.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert!(lines.next().is_none());
    let col = |name: &str| row[header.iter().position(|h| *h == name).unwrap()];
    assert_eq!(col("mode"), "multi_agent");
    assert_eq!(col("trials"), "100");
    assert_eq!(col("success_rate"), "1.00");
    assert!(out_dir.join("eval_report.txt").exists());
    assert!(out_dir.join("problems.json").exists());
}

#[test]
fn replay_summarizes_a_log() {
    let golden = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/golden/level1_session.log");
    let out = pear(&["replay", "--log", golden], "");
    assert_eq!(code(&out), 0);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("reconstructions: 4\n"));
    assert!(stdout.contains("# reconstruction 4\n"));

    assert_eq!(code(&pear(&["replay", "--log", "/nonexistent.log"], "")), 1);
}
