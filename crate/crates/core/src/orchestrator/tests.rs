use std::sync::{Arc, Mutex};

use chrono::NaiveDateTime;

use super::*;
use crate::agents::collect::tests::CASE_ANSWERS;
use crate::demo::{demo_gateway, expected_trajectory, recorded_replies, DEMO_MODEL};
use crate::executor::MockScenario;
use crate::session_log::{replay, FixedClock, TIME_FORMAT};

const DATA_DIR: &str = "/Modified/to/Hide/User/Info/";

fn clock() -> Arc<dyn Clock> {
    Arc::new(FixedClock::constant(
        NaiveDateTime::parse_from_str("20240913-00:02:56", TIME_FORMAT).unwrap(),
    ))
}

struct Bench {
    dir: tempfile::TempDir,
    gateway: Gateway,
    kb: KnowledgeBase,
}

impl Bench {
    fn new() -> Self {
        Self::with_gateway(demo_gateway())
    }

    fn with_gateway(gateway: Gateway) -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
            gateway,
            kb: KnowledgeBase::demo_named("neurips_demo"),
        }
    }

    fn settings(&self, level: u8, scenario: MockScenario) -> SessionSettings {
        let mut s = SessionSettings::new(level, DEMO_MODEL, DATA_DIR, self.dir.path());
        s.exec = ExecMode::Mock(scenario);
        s.session_id = "test".into();
        s
    }

    fn run(&self, settings: &SessionSettings, replies: Vec<String>) -> SessionOutcome {
        let deps = SessionDeps {
            gateway: &self.gateway,
            kb: &self.kb,
            clock: clock(),
            redactor: Redactor::none(),
            cancel: Default::default(),
        };
        run_session(settings, deps, &mut ScriptedReplies::new(replies), &NullSink).unwrap()
    }
}

fn answers_then<I: IntoIterator<Item = &'static str>>(rest: I) -> Vec<String> {
    CASE_ANSWERS.iter().copied().chain(rest).map(String::from).collect()
}

#[test]
fn recorded_session_reproduces_the_trajectory() {
    let b = Bench::new();
    let out = b.run(&b.settings(1, MockScenario::default()), recorded_replies());
    assert_eq!(out.state.stage, Stage::Done, "{}", out.log_text);
    assert_eq!(out.state.counter, 4);
    let want = expected_trajectory();
    assert_eq!(out.state.history, want[..4].to_vec());
    assert_eq!(out.state.params.as_ref(), Some(&want[4]));
    assert!(out.log_text.ends_with("PEAR: Reconstructions completed. Have a nice day!\n"));
}

#[test]
fn log_structure_follows_the_recording() {
    let b = Bench::new();
    let out = b.run(&b.settings(1, MockScenario::default()), recorded_replies());
    let ours = replay(&out.log_text).unwrap();
    let recorded = replay(crate::demo::RECORDED_LOG).unwrap();
    assert_eq!(ours.agents, recorded.agents);
    assert_eq!(ours.replies, recorded.replies);
    assert_eq!(ours.reconstructions(), 4);
    assert_eq!(ours.reconstruction_params, expected_trajectory()[..4].to_vec());
    let headers = out.log_text.matches("########## Reconstruction No.").count();
    assert_eq!(headers as u32, out.state.counter);
    assert_eq!(std::fs::read_to_string(&out.log_path).unwrap(), out.log_text);
    assert!(out.log_path.ends_with("pear_test.log"));
}

#[test]
fn events_fold_to_the_final_state() {
    let b = Bench::new();
    let out = b.run(&b.settings(1, MockScenario::default()), recorded_replies());
    assert_eq!(fold(1, DEFAULT_MAX_ROUNDS, &out.events).unwrap(), out.state);
    // every Generated follows a confirmation
    for w in out.events.windows(2) {
        if matches!(w[1], Event::Generated { .. }) {
            assert!(matches!(&w[0], Event::UserReply(r) if crate::agents::confirm::is_lgtm(r)) || w[0] == Event::AutoConfirmed);
        }
    }
}

#[test]
fn level_zero_runs_once_without_recommendations() {
    let b = Bench::new();
    let out = b.run(&b.settings(0, MockScenario::default()), answers_then(["lgtm", "yes", "no", "yes", "no", "no", "no"]));
    assert_eq!(out.state.stage, Stage::Done, "{}", out.log_text);
    assert_eq!(out.state.counter, 1);
    assert!(!out.log_text.contains("Agent: ParamsRecommender"));
    assert!(!out.log_text.contains("Agent: UpdatesRecommender"));
    assert!(!out.log_text.contains("Agent: ParamsUpdater"));
    // the collected values go out unchanged
    assert_eq!(out.state.history[0].update_batch_size, ReconstructionParams::default().update_batch_size);
}

#[test]
fn level_two_stops_on_a_clean_report() {
    let b = Bench::new();
    let scenario = MockScenario {
        needed_probe_modes: 6,
        needs_layer_reg: false,
        target_blur: 1.0,
        has_drift: false,
        min_iterations: 50,
    };
    let out = b.run(&b.settings(2, scenario), answers_then([]));
    assert_eq!(out.state.stage, Stage::Done, "{}", out.log_text);
    assert_eq!(out.state.counter, 2);
    assert!(out.reports[1].is_clean());
    assert_eq!(out.mock_scores, vec![0.8, 1.0]);
    assert!(!out.log_text.contains("User: lgtm"));
}

#[test]
fn level_two_without_vision_asks_the_user() {
    let p = crate::demo::demo_provider(crate::llm::FaultConfig::none()).without_vision();
    let b = Bench::with_gateway(Gateway::new(Arc::new(p), DEMO_MODEL));
    let scenario = MockScenario {
        needed_probe_modes: 3,
        needs_layer_reg: false,
        target_blur: 1.0,
        has_drift: false,
        min_iterations: 50,
    };
    let out = b.run(&b.settings(2, scenario), answers_then(["yes", "no", "yes", "no", "no"]));
    assert_eq!(out.state.stage, Stage::Done, "{}", out.log_text);
    assert_eq!(out.human_quality_rounds, 1);
    assert!(out.log_text.contains("so I will ask you instead"));
}

#[test]
fn abort_token_ends_the_session() {
    let b = Bench::new();
    let out = b.run(&b.settings(1, MockScenario::default()), answers_then(["/abort"]));
    assert_eq!(out.state.stage, Stage::Aborted);
    assert_eq!(out.state.abort_cause.as_deref(), Some("aborted by the user"));
    assert_eq!(out.state.counter, 0);
    assert!(out.log_text.ends_with("PEAR: Session aborted: aborted by the user\n"));
}

#[test]
fn running_out_of_replies_aborts() {
    let b = Bench::new();
    let out = b.run(&b.settings(1, MockScenario::default()), vec!["31".into()]);
    assert_eq!(out.state.stage, Stage::Aborted);
    assert!(out.state.abort_cause.unwrap().contains("no more replies"));
}

#[test]
fn edits_are_shown_and_applied() {
    let b = Bench::new();
    let out = b.run(
        &b.settings(1, MockScenario::default()),
        answers_then(["set the update batch size to 256", "lgtm", "yes", "no", "yes", "no", "no", "no"]),
    );
    assert_eq!(out.state.history[0].update_batch_size, 256);
    assert!(out.log_text.contains("PEAR: Here are the updated parameters:\n"));
}

#[test]
fn unreadable_answers_are_asked_again() {
    let b = Bench::new();
    let mut replies = answers_then([]);
    replies[0] = "I am not sure".into();
    replies.insert(14, "31".into());
    replies.extend(["lgtm", "yes", "no", "yes", "no", "no", "no"].map(String::from));
    let out = b.run(&b.settings(1, MockScenario::default()), replies);
    assert_eq!(out.state.stage, Stage::Done, "{}", out.log_text);
    assert_eq!(out.state.history[0].scan_number, 31);
    assert!(out.log_text.contains("Could you answer it again?"));
}

#[test]
fn events_reach_the_sink() {
    let b = Bench::new();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let sink = {
        let seen = seen.clone();
        move |e: SessionEvent| seen.lock().unwrap().push(e)
    };
    let deps = SessionDeps {
        gateway: &b.gateway,
        kb: &b.kb,
        clock: clock(),
        redactor: Redactor::none(),
        cancel: Default::default(),
    };
    let settings = b.settings(1, MockScenario::default());
    let out = run_session(&settings, deps, &mut ScriptedReplies::new(recorded_replies()), &sink).unwrap();
    let seen = seen.lock().unwrap();
    let messages: String = seen
        .iter()
        .filter_map(|e| match e {
            SessionEvent::Message { entry } => Some(entry.render()),
            _ => None,
        })
        .collect();
    assert_eq!(messages, out.log_text);
    assert!(matches!(seen.last(), Some(SessionEvent::Finished { stage: Stage::Done, reconstructions: 4, .. })));
}

#[test]
fn bad_settings_are_rejected() {
    let b = Bench::new();
    let mut s = b.settings(3, MockScenario::default());
    let deps = SessionDeps {
        gateway: &b.gateway,
        kb: &b.kb,
        clock: clock(),
        redactor: Redactor::none(),
        cancel: Default::default(),
    };
    assert!(matches!(
        run_session(&s, deps.clone(), &mut ScriptedReplies::default(), &NullSink),
        Err(SessionError::Settings(_))
    ));
    s.automation_level = 1;
    s.script_directory = "/nonexistent/dir".into();
    assert!(run_session(&s, deps, &mut ScriptedReplies::default(), &NullSink).is_err());
}

#[test]
fn cancel_stops_before_the_next_step() {
    let b = Bench::new();
    let cancel = CancelFlag::default();
    let deps = SessionDeps {
        gateway: &b.gateway,
        kb: &b.kb,
        clock: clock(),
        redactor: Redactor::none(),
        cancel: cancel.clone(),
    };
    let mut answers = ScriptedReplies::new(recorded_replies());
    let mut replies = |prompt: &str| {
        if prompt == CONFIRM_PROMPT {
            cancel.cancel();
        }
        answers.next_reply(prompt)
    };
    let out = run_session(&b.settings(1, MockScenario::default()), deps, &mut replies, &NullSink).unwrap();
    assert_eq!(out.state.stage, Stage::Aborted);
    assert_eq!(out.state.abort_cause.as_deref(), Some("aborted by the user"));
    assert_eq!(out.state.counter, 0);
    assert!(out.scripts.is_empty());
    assert!(out.log_text.ends_with("PEAR: Session aborted: aborted by the user\n"), "{}", out.log_text);
}
