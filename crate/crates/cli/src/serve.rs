//! HTTP service. Each session runs the orchestrator on its own thread;
//! clients read its events by long-polling and answer its prompts.
//!
//! Routes, all JSON:
//! - `POST /api/sessions` creates a session and returns its id;
//! - `GET /api/sessions/{id}/events?since=<seq>` returns events after `seq`;
//! - `POST /api/sessions/{id}/input` answers the pending prompt, optionally
//!   naming its event seq;
//! - `GET /api/sessions/{id}/params` returns the current parameters;
//! - `GET /api/sessions/{id}/log` returns the session log;
//! - `POST /api/sessions/{id}/abort` ends the session.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{mpsc, Arc, Mutex, RwLock};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use pear_core::executor::ExecMode;
use pear_core::kb::KnowledgeBase;
use pear_core::orchestrator::{
    run_session, CancelFlag, ReplyError, ReplySource, SessionDeps, SessionEvent, SessionSettings, Stage, ABORT_TOKEN,
};
use pear_core::params::{to_canonical_text, ReconstructionParams};
use pear_core::session_log::{log_path, Clock, Redactor, SystemClock};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::watch;

use crate::setup;

pub const DEFAULT_POLL_TIMEOUT: Duration = Duration::from_secs(30);

type ClockFactory = Arc<dyn Fn() -> Arc<dyn Clock> + Send + Sync>;

#[derive(Clone)]
pub struct ServeConfig {
    pub kb: Arc<KnowledgeBase>,
    pub default_model: String,
    /// Sessions that do not name a script directory get `script_root/<id>`.
    pub script_root: PathBuf,
    pub exec: ExecMode,
    pub poll_timeout: Duration,
    pub clock: ClockFactory,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            kb: Arc::new(KnowledgeBase::demo()),
            default_model: setup::BUILTIN_LLM.into(),
            script_root: PathBuf::from("pear_sessions"),
            exec: ExecMode::Mock(Default::default()),
            poll_timeout: DEFAULT_POLL_TIMEOUT,
            clock: Arc::new(|| Arc::new(SystemClock)),
        }
    }
}

/// Request body for a new session. Every field is optional, and the field
/// names match [`SessionSettings`] so a serialized settings object is accepted.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub automation_level: Option<u8>,
    pub model: Option<String>,
    pub data_directory: Option<String>,
    pub script_directory: Option<PathBuf>,
    pub working_directory: Option<PathBuf>,
    pub user_name: Option<String>,
    pub computer_name: Option<String>,
    pub external_script: Option<String>,
    pub max_rounds: Option<u32>,
    pub session_id: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Input {
    text: String,
    /// The prompt being answered. A stale `seq` is a conflict, which makes
    /// a repeated post harmless.
    #[serde(default)]
    seq: Option<u64>,
}

#[derive(Debug, Deserialize)]
struct Since {
    #[serde(default)]
    since: u64,
}

/// A session event with its position in the stream, starting at 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeqEvent {
    pub seq: u64,
    #[serde(flatten)]
    pub event: SessionEvent,
}

#[derive(Default)]
struct Progress {
    events: Vec<SeqEvent>,
    /// Seq and text of the prompt waiting for an answer, if any.
    awaiting: Option<(u64, String)>,
    params: Option<ReconstructionParams>,
    stage: Option<Stage>,
    finished: bool,
    abort_requested: bool,
}

struct Session {
    progress: Mutex<Progress>,
    replies: Mutex<mpsc::Sender<String>>,
    seq: watch::Sender<u64>,
    cancel: CancelFlag,
    log_path: PathBuf,
}

impl Session {
    fn push(&self, event: SessionEvent) {
        let seq = {
            let mut p = self.progress.lock().expect("progress lock");
            let seq = p.events.len() as u64 + 1;
            match &event {
                SessionEvent::AwaitingReply { prompt } if !p.abort_requested => p.awaiting = Some((seq, prompt.clone())),
                SessionEvent::Parameters { params } => p.params = Some(params.clone()),
                SessionEvent::Stage { stage } => p.stage = Some(*stage),
                SessionEvent::Finished { stage, .. } => {
                    p.stage = Some(*stage);
                    p.finished = true;
                    p.awaiting = None;
                }
                _ => {}
            }
            p.events.push(SeqEvent { seq, event });
            seq
        };
        self.seq.send_replace(seq);
    }
}

struct ChannelReplies {
    rx: mpsc::Receiver<String>,
    session: Arc<Session>,
}

impl ReplySource for ChannelReplies {
    fn next_reply(&mut self, _prompt: &str) -> Result<String, ReplyError> {
        if self.session.progress.lock().expect("progress lock").abort_requested {
            return Ok(ABORT_TOKEN.to_string());
        }
        self.rx.recv().map_err(|_| ReplyError::Closed)
    }
}

#[derive(Clone)]
pub struct AppState {
    cfg: ServeConfig,
    sessions: Arc<RwLock<HashMap<String, Arc<Session>>>>,
}

impl AppState {
    pub fn new(cfg: ServeConfig) -> Self {
        Self {
            cfg,
            sessions: Default::default(),
        }
    }

    fn session(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        self.sessions
            .read()
            .expect("sessions lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no session {id}")))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.message}))).into_response()
    }
}

/// Bodies are parsed by hand so that every malformed body is a 400.
fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed body: {e}")))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/sessions", post(create))
        .route("/api/sessions/{id}/events", get(events))
        .route("/api/sessions/{id}/input", post(input))
        .route("/api/sessions/{id}/params", get(params))
        .route("/api/sessions/{id}/log", get(log))
        .route("/api/sessions/{id}/abort", post(abort))
        .with_state(state)
}

fn settings_for(cfg: &ServeConfig, req: CreateSession) -> Result<SessionSettings, ApiError> {
    let id = req
        .session_id
        .unwrap_or_else(|| SessionSettings::new(0, "", "", std::path::Path::new(".")).session_id);
    if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
        return Err(ApiError::bad_request("session_id may hold only letters, digits, '_' and '-'"));
    }
    let script_dir = req.script_directory.unwrap_or_else(|| cfg.script_root.join(&id));
    let model = req.model.unwrap_or_else(|| cfg.default_model.clone());
    let mut s = SessionSettings::new(
        req.automation_level.unwrap_or(1),
        &model,
        &req.data_directory.unwrap_or_else(|| "./".into()),
        &script_dir,
    );
    s.session_id = id;
    if let Some(w) = req.working_directory {
        s.working_directory = w;
    }
    s.user_name = req.user_name.unwrap_or(s.user_name);
    s.computer_name = req.computer_name.unwrap_or_else(setup::host_name);
    s.external_script = req.external_script.unwrap_or_default();
    s.max_rounds = req.max_rounds.unwrap_or(s.max_rounds);
    s.exec = cfg.exec.clone();
    Ok(s)
}

async fn create(State(state): State<AppState>, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let req: CreateSession = if body.iter().all(u8::is_ascii_whitespace) {
        CreateSession::default()
    } else {
        parse_body(&body)?
    };
    let settings = settings_for(&state.cfg, req)?;
    std::fs::create_dir_all(&settings.script_directory)
        .map_err(|e| ApiError::bad_request(format!("script directory: {e}")))?;
    settings.validate().map_err(|e| ApiError::bad_request(e.to_string()))?;
    let gateway = setup::gateway(&settings.model).map_err(|e| ApiError::bad_request(format!("{e:#}")))?;

    let (tx, rx) = mpsc::channel();
    let session = Arc::new(Session {
        progress: Default::default(),
        replies: Mutex::new(tx),
        seq: watch::channel(0).0,
        cancel: CancelFlag::default(),
        log_path: log_path(&settings.script_directory, &settings.session_id),
    });
    {
        let mut sessions = state.sessions.write().expect("sessions lock");
        if sessions.contains_key(&settings.session_id) {
            return Err(ApiError::conflict(format!("session {} exists", settings.session_id)));
        }
        sessions.insert(settings.session_id.clone(), session.clone());
    }

    let kb = state.cfg.kb.clone();
    let clock = (state.cfg.clock)();
    let id = settings.session_id.clone();
    std::thread::Builder::new()
        .name(format!("session-{id}"))
        .spawn(move || {
            let deps = SessionDeps {
                gateway: &gateway,
                kb: &kb,
                clock,
                redactor: Redactor::default(),
                cancel: session.cancel.clone(),
            };
            let sink = |e: SessionEvent| session.push(e);
            let mut replies = ChannelReplies {
                rx,
                session: session.clone(),
            };
            if let Err(e) = run_session(&settings, deps, &mut replies, &sink) {
                tracing::error!(session = %settings.session_id, error = %e, "session failed to start");
                session.push(SessionEvent::Finished {
                    stage: Stage::Aborted,
                    reconstructions: 0,
                    cause: Some(e.to_string()),
                });
            }
        })
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok((StatusCode::CREATED, Json(json!({"session_id": id}))))
}

async fn events(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<Since>,
) -> Result<impl IntoResponse, ApiError> {
    let session = state.session(&id)?;
    let mut rx = session.seq.subscribe();
    let deadline = tokio::time::Instant::now() + state.cfg.poll_timeout;
    loop {
        {
            let p = session.progress.lock().expect("progress lock");
            let after: Vec<SeqEvent> = p.events.iter().skip(q.since as usize).cloned().collect();
            if !after.is_empty() || p.finished {
                return Ok(Json(json!({
                    "events": after,
                    "finished": p.finished,
                    "awaiting": p.awaiting.as_ref().map(|(seq, prompt)| json!({"seq": seq, "prompt": prompt})),
                })));
            }
            rx.mark_unchanged();
        }
        if tokio::time::timeout_at(deadline, rx.changed()).await.is_err() {
            return Ok(Json(json!({"events": [], "finished": false, "awaiting": null})));
        }
    }
}

async fn input(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let session = state.session(&id)?;
    let Input { text, seq } = parse_body(&body)?;
    let mut p = session.progress.lock().expect("progress lock");
    let Some((awaited, _)) = p.awaiting else {
        return Err(ApiError::conflict(match p.stage {
            Some(stage) => format!("no reply is awaited (stage {stage:?})"),
            None => "no reply is awaited".into(),
        }));
    };
    if seq.is_some_and(|s| s != awaited) {
        return Err(ApiError::conflict(format!("the awaited prompt is event {awaited}")));
    }
    p.awaiting = None;
    session
        .replies
        .lock()
        .expect("replies lock")
        .send(text)
        .map_err(|_| ApiError::conflict("session has ended"))?;
    Ok((StatusCode::ACCEPTED, Json(json!({"accepted": true, "seq": awaited}))))
}

async fn params(State(state): State<AppState>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    let session = state.session(&id)?;
    let p = session.progress.lock().expect("progress lock");
    Ok(Json(json!({
        "text": p.params.as_ref().map(to_canonical_text),
        "params": p.params,
    })))
}

async fn log(State(state): State<AppState>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    let session = state.session(&id)?;
    let text = std::fs::read_to_string(&session.log_path)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("reading the log: {e}")))?;
    Ok(Json(json!({"log": text})))
}

async fn abort(State(state): State<AppState>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    let session = state.session(&id)?;
    let mut p = session.progress.lock().expect("progress lock");
    if p.finished {
        return Err(ApiError::conflict("session has ended"));
    }
    p.abort_requested = true;
    session.cancel.cancel();
    if p.awaiting.take().is_some() {
        let _ = session.replies.lock().expect("replies lock").send(ABORT_TOKEN.to_string());
    }
    Ok((StatusCode::ACCEPTED, Json(json!({"aborting": true}))))
}

/// Serves until interrupted.
pub async fn serve(addr: &str, cfg: ServeConfig) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(AppState::new(cfg)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
