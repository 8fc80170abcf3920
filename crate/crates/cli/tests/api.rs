//! The HTTP API, driven in-process through the router.

use std::os::unix::fs::PermissionsExt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use pear_cli::serve::{router, AppState, SeqEvent, ServeConfig};
use pear_core::demo::{expected_trajectory, recorded_replies};
use pear_core::executor::ExecMode;
use pear_core::orchestrator::{SessionEvent, Stage, CONFIRM_PROMPT};
use pear_core::params::{to_canonical_text, ReconstructionParams};
use pear_core::session_log::{render_entries, replay, FixedClock};
use serde_json::{json, Value};
use tower::ServiceExt;

struct Api {
    app: Router,
    _dir: tempfile::TempDir,
}

impl Api {
    fn new() -> Self {
        Self::with(|_| {})
    }

    fn with(tweak: impl FnOnce(&mut ServeConfig)) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ServeConfig {
            script_root: dir.path().to_path_buf(),
            clock: Arc::new(|| Arc::new(FixedClock::parse("20240913-00:02:56", 1).unwrap())),
            ..ServeConfig::default()
        };
        tweak(&mut cfg);
        Self {
            app: router(AppState::new(cfg)),
            _dir: dir,
        }
    }

    async fn call(&self, method: &str, uri: &str, body: Option<&str>) -> (StatusCode, Value) {
        let req = Request::builder()
            .method(method)
            .uri(uri)
            .header("content-type", "application/json")
            .body(body.map(|b| Body::from(b.to_string())).unwrap_or_else(Body::empty))
            .unwrap();
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
        (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
    }

    async fn create(&self, body: Value) -> String {
        let (status, v) = self.call("POST", "/api/sessions", Some(&body.to_string())).await;
        assert_eq!(status, StatusCode::CREATED, "{v}");
        v["session_id"].as_str().unwrap().to_string()
    }

    async fn events(&self, id: &str, since: usize) -> (Vec<SeqEvent>, bool, Option<u64>) {
        let (status, v) = self.call("GET", &format!("/api/sessions/{id}/events?since={since}"), None).await;
        assert_eq!(status, StatusCode::OK, "{v}");
        (
            serde_json::from_value(v["events"].clone()).unwrap(),
            v["finished"].as_bool().unwrap(),
            v["awaiting"]["seq"].as_u64(),
        )
    }

    async fn input(&self, id: &str, text: &str) -> StatusCode {
        self.post_input(id, json!({ "text": text })).await
    }

    async fn post_input(&self, id: &str, body: Value) -> StatusCode {
        self.call("POST", &format!("/api/sessions/{id}/input"), Some(&body.to_string())).await.0
    }

    /// Reads events until `done` holds for the events so far or the
    /// session finishes.
    async fn until(&self, id: &str, seen: &mut Vec<SeqEvent>, done: impl Fn(&[SeqEvent], Option<u64>) -> bool) {
        let deadline = Instant::now() + Duration::from_secs(60);
        loop {
            let (new, finished, awaiting) = self.events(id, seen.len()).await;
            seen.extend(new);
            if done(seen, awaiting) || finished {
                return;
            }
            assert!(Instant::now() < deadline, "timed out");
        }
    }

    /// Answers every prompt from `replies` until the session finishes.
    async fn drive(&self, id: &str, replies: Vec<String>) -> Vec<SeqEvent> {
        let mut seen = Vec::new();
        let mut replies = replies.into_iter();
        loop {
            self.until(id, &mut seen, |_, awaiting| awaiting.is_some()).await;
            if matches!(seen.last().map(|e| &e.event), Some(SessionEvent::Finished { .. })) {
                return seen;
            }
            let reply = replies.next().expect("a reply for every prompt");
            assert_eq!(self.input(id, &reply).await, StatusCode::ACCEPTED);
        }
    }
}

fn lines(events: &[SeqEvent]) -> String {
    let entries: Vec<_> = events
        .iter()
        .filter_map(|e| match &e.event {
            SessionEvent::Message { entry } => Some(entry.clone()),
            _ => None,
        })
        .collect();
    render_entries(&entries)
}

#[tokio::test(flavor = "multi_thread")]
async fn first_events_show_the_banner_and_greeting() {
    let api = Api::new();
    let id = api.create(json!({"automation_level": 1})).await;
    let mut seen = Vec::new();
    api.until(&id, &mut seen, |_, awaiting| awaiting.is_some()).await;
    let text = lines(&seen);
    assert!(text.contains(" - ########## Settings ##########\n"));
    assert!(text.contains(" - Automation level: 1\n"));
    assert!(text.contains("PEAR: Hello User. Thank you for letting me assist"));
    assert_eq!(api.call("POST", &format!("/api/sessions/{id}/abort"), None).await.0, StatusCode::ACCEPTED);
}

#[tokio::test(flavor = "multi_thread")]
async fn scripted_session_runs_over_http() {
    let api = Api::new();
    let id = api
        .create(json!({"automation_level": 1, "session_id": "http", "data_directory": "/Modified/to/Hide/User/Info/"}))
        .await;
    assert_eq!(id, "http");
    let events = api.drive(&id, recorded_replies()).await;

    let seqs: Vec<u64> = events.iter().map(|e| e.seq).collect();
    assert_eq!(seqs, (1..=events.len() as u64).collect::<Vec<_>>(), "gapless from 1");
    assert!(matches!(
        events.last().unwrap().event,
        SessionEvent::Finished { stage: Stage::Done, reconstructions: 4, .. }
    ));

    // the event stream renders to the log byte for byte
    let (status, log) = api.call("GET", &format!("/api/sessions/{id}/log"), None).await;
    assert_eq!(status, StatusCode::OK);
    let log = log["log"].as_str().unwrap();
    assert_eq!(lines(&events), log);

    // the same parameter history as the terminal front-end
    let want = expected_trajectory();
    assert_eq!(replay(log).unwrap().reconstruction_params, want[..4].to_vec());
    let (_, p) = api.call("GET", &format!("/api/sessions/{id}/params"), None).await;
    let params: ReconstructionParams = serde_json::from_value(p["params"].clone()).unwrap();
    assert_eq!(params, want[4]);
    assert_eq!(p["text"].as_str().unwrap(), to_canonical_text(&want[4]));

    // a confirmation is followed by the generated script
    let lgtm = events
        .iter()
        .position(|e| matches!(&e.event, SessionEvent::Message { entry } if entry.text.eq_ignore_ascii_case("lgtm")))
        .unwrap();
    assert!(events[lgtm..].iter().any(|e| matches!(&e.event,
        SessionEvent::Message { entry } if entry.text.starts_with("The reconstruction script has been generated at"))));

    assert_eq!(api.input(&id, "yes").await, StatusCode::CONFLICT);
    assert_eq!(api.call("POST", &format!("/api/sessions/{id}/abort"), None).await.0, StatusCode::CONFLICT);
}

#[tokio::test(flavor = "multi_thread")]
async fn each_prompt_takes_one_input() {
    let api = Api::new();
    let id = api.create(json!({})).await;
    let mut seen = Vec::new();
    api.until(&id, &mut seen, |_, awaiting| awaiting.is_some()).await;
    let (_, _, Some(prompt)) = api.events(&id, 0).await else { panic!("a prompt is pending") };
    let reply = json!({"text": recorded_replies()[0], "seq": prompt});
    assert_eq!(api.post_input(&id, reply.clone()).await, StatusCode::ACCEPTED);
    assert_eq!(api.post_input(&id, reply.clone()).await, StatusCode::CONFLICT);
    api.until(&id, &mut seen, |_, awaiting| awaiting.is_some_and(|s| s != prompt)).await;
    assert_eq!(api.post_input(&id, reply).await, StatusCode::CONFLICT);
    let user_turns = seen
        .iter()
        .filter(|e| matches!(&e.event, SessionEvent::Message { entry } if entry.render().contains(" - User: ")))
        .count();
    assert_eq!(user_turns, 1);
    api.call("POST", &format!("/api/sessions/{id}/abort"), None).await;
}

#[tokio::test(flavor = "multi_thread")]
async fn input_while_running_conflicts() {
    let bin = tempfile::tempdir().unwrap();
    let command = bin.path().join("slow_recon");
    std::fs::write(&command, "#!/bin/sh\nsleep 3\necho \"Elapsed time is 3.0 seconds.\"\n").unwrap();
    std::fs::set_permissions(&command, std::fs::Permissions::from_mode(0o755)).unwrap();
    let exec = ExecMode::External {
        command: command.display().to_string(),
        timeout: Duration::from_secs(30),
    };
    let api = Api::with(|cfg| cfg.exec = exec);
    let id = api.create(json!({})).await;

    let mut seen = Vec::new();
    let mut replies = recorded_replies().into_iter();
    loop {
        api.until(&id, &mut seen, |ev, awaiting| {
            awaiting.is_some() || ev.iter().any(|e| matches!(e.event, SessionEvent::Stage { stage: Stage::Run }))
        })
        .await;
        if seen.iter().any(|e| matches!(e.event, SessionEvent::Stage { stage: Stage::Run })) {
            break;
        }
        assert_eq!(api.input(&id, &replies.next().unwrap()).await, StatusCode::ACCEPTED);
    }
    let (status, v) = api
        .call("POST", &format!("/api/sessions/{id}/input"), Some(r#"{"text": "lgtm"}"#))
        .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert!(v["error"].as_str().unwrap().contains("Run"), "{v}");
    api.call("POST", &format!("/api/sessions/{id}/abort"), None).await;
}

#[tokio::test(flavor = "multi_thread")]
async fn abort_ends_the_session() {
    let api = Api::new();
    let id = api.create(json!({})).await;
    let mut seen = Vec::new();
    api.until(&id, &mut seen, |_, awaiting| awaiting.is_some()).await;
    assert_eq!(api.call("POST", &format!("/api/sessions/{id}/abort"), None).await.0, StatusCode::ACCEPTED);
    api.until(&id, &mut seen, |_, _| false).await;
    assert!(matches!(
        seen.last().unwrap().event,
        SessionEvent::Finished { stage: Stage::Aborted, .. }
    ));
    assert_eq!(api.call("POST", &format!("/api/sessions/{id}/abort"), None).await.0, StatusCode::CONFLICT);
    assert_eq!(api.input(&id, "hello").await, StatusCode::CONFLICT);
}

#[tokio::test(flavor = "multi_thread")]
async fn abort_at_confirmation_generates_nothing() {
    let api = Api::new();
    let id = api.create(json!({})).await;
    let mut seen = Vec::new();
    let mut replies = recorded_replies().into_iter();
    loop {
        api.until(&id, &mut seen, |_, awaiting| awaiting.is_some()).await;
        if matches!(&seen.last().unwrap().event, SessionEvent::AwaitingReply { prompt } if prompt == CONFIRM_PROMPT) {
            break;
        }
        api.input(&id, &replies.next().unwrap()).await;
    }
    api.call("POST", &format!("/api/sessions/{id}/abort"), None).await;
    api.until(&id, &mut seen, |_, _| false).await;
    assert!(matches!(
        seen.last().unwrap().event,
        SessionEvent::Finished { stage: Stage::Aborted, reconstructions: 0, .. }
    ));
    assert!(!lines(&seen).contains("has been generated at"));
}

#[tokio::test(flavor = "multi_thread")]
async fn unknown_sessions_are_not_found() {
    let api = Api::new();
    for (method, path) in [
        ("GET", "events"),
        ("POST", "input"),
        ("GET", "params"),
        ("GET", "log"),
        ("POST", "abort"),
    ] {
        let (status, v) = api
            .call(method, &format!("/api/sessions/nope/{path}"), Some(r#"{"text": "x"}"#))
            .await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{method} {path}");
        assert!(v["error"].is_string());
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn malformed_bodies_are_bad_requests() {
    let api = Api::new();
    for body in [
        "{",
        "[1, 2]",
        r#"{"automation_level": "one"}"#,
        r#"{"automation_level": 3}"#,
        r#"{"colour": "blue"}"#,
        r#"{"session_id": "../escape"}"#,
        r#"{"max_rounds": 0}"#,
    ] {
        let (status, _) = api.call("POST", "/api/sessions", Some(body)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
    }
    let id = api.create(json!({})).await;
    for body in ["not json", r#"{"txt": "lgtm"}"#, r#"{"text": 5}"#] {
        let (status, _) = api.call("POST", &format!("/api/sessions/{id}/input"), Some(body)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
    }
    let (status, _) = api.call("POST", "/api/sessions", Some(&json!({"session_id": id}).to_string())).await;
    assert_eq!(status, StatusCode::CONFLICT);
    api.call("POST", &format!("/api/sessions/{id}/abort"), None).await;
}

#[tokio::test(flavor = "multi_thread")]
async fn long_poll_times_out_empty() {
    let api = Api::with(|cfg| cfg.poll_timeout = Duration::from_millis(300));
    let id = api.create(json!({})).await;
    let mut seen = Vec::new();
    api.until(&id, &mut seen, |_, awaiting| awaiting.is_some()).await;
    let start = Instant::now();
    let (new, finished, awaiting) = api.events(&id, seen.len()).await;
    assert!(start.elapsed() >= Duration::from_millis(300));
    assert!(new.is_empty() && !finished);
    assert!(awaiting.is_none());
    api.call("POST", &format!("/api/sessions/{id}/abort"), None).await;
}

#[tokio::test(flavor = "multi_thread")]
async fn long_poll_wakes_on_new_events() {
    let api = Arc::new(Api::new());
    let id = api.create(json!({})).await;
    let mut seen = Vec::new();
    api.until(&id, &mut seen, |_, awaiting| awaiting.is_some()).await;
    let since = seen.len();
    let poll = {
        let (api, id) = (api.clone(), id.clone());
        tokio::spawn(async move { api.events(&id, since).await })
    };
    tokio::time::sleep(Duration::from_millis(100)).await;
    let start = Instant::now();
    assert_eq!(api.input(&id, &recorded_replies()[0]).await, StatusCode::ACCEPTED);
    let (new, _, _) = poll.await.unwrap();
    assert!(start.elapsed() < Duration::from_secs(10));
    assert_eq!(new[0].seq, since as u64 + 1);
    api.call("POST", &format!("/api/sessions/{id}/abort"), None).await;
}
