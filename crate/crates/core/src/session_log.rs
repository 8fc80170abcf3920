//! The session log: one timestamped line per message, multi-line payloads
//! written verbatim after their header line.
//!
//! ```text
//! 20240913-00:04:28 - Agent: ParamsConfirmer
//! 20240913-00:04:51 - User: lgtm
//! ```

use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::{Arc, LazyLock, Mutex};

use chrono::{Local, NaiveDateTime, TimeDelta};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentRole, Speaker};
use crate::params::{parse_params, ReconstructionParams};

pub const TIME_FORMAT: &str = "%Y%m%d-%H:%M:%S";
pub const SETTINGS_BANNER: &str = "########## Settings ##########";
pub const BANNER_END: &str = "##############################";

pub fn log_path(script_dir: &Path, session_id: &str) -> PathBuf {
    script_dir.join(format!("pear_{session_id}.log"))
}

pub fn reconstruction_banner(n: u32) -> String {
    format!("########## Reconstruction No.{n}: ##########")
}

pub trait Clock: Send + Sync {
    fn now(&self) -> NaiveDateTime;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> NaiveDateTime {
        Local::now().naive_local()
    }
}

/// A clock that starts at a fixed time and advances `step_secs` per reading.
pub struct FixedClock {
    start: NaiveDateTime,
    step_secs: i64,
    readings: AtomicI64,
}

impl FixedClock {
    pub fn new(start: NaiveDateTime, step_secs: i64) -> Self {
        Self {
            start,
            step_secs,
            readings: AtomicI64::new(0),
        }
    }

    /// Always reads `at`.
    pub fn constant(at: NaiveDateTime) -> Self {
        Self::new(at, 0)
    }

    pub fn parse(text: &str, step_secs: i64) -> Result<Self, chrono::ParseError> {
        Ok(Self::new(NaiveDateTime::parse_from_str(text, TIME_FORMAT)?, step_secs))
    }
}

impl Clock for FixedClock {
    fn now(&self) -> NaiveDateTime {
        let k = self.readings.fetch_add(1, Ordering::Relaxed);
        self.start + TimeDelta::seconds(k * self.step_secs)
    }
}

/// Text replacements applied to every entry before it is written.
#[derive(Debug, Clone)]
pub struct Redactor {
    rules: Vec<(Regex, String)>,
}

impl Default for Redactor {
    /// API keys and home directories.
    fn default() -> Self {
        let rules = [
            (r"sk-[A-Za-z0-9_\-]{16,}", "[REDACTED]"),
            (r"(?i)(api[_-]?key\s*[=:]\s*)\S+", "${1}[REDACTED]"),
            (r"/home/[^/\s'\x22]+", "/home/[REDACTED]"),
            (r"/Users/[^/\s'\x22]+", "/Users/[REDACTED]"),
        ];
        Self {
            rules: rules
                .into_iter()
                .map(|(p, r)| (Regex::new(p).expect("built-in pattern"), r.to_string()))
                .collect(),
        }
    }
}

impl Redactor {
    pub fn none() -> Self {
        Self { rules: Vec::new() }
    }

    /// Adds a rule; rules run in the order they were added, literals first
    /// when added first.
    pub fn with_pattern(mut self, pattern: &str, replacement: &str) -> Result<Self, regex::Error> {
        self.rules.push((Regex::new(pattern)?, replacement.to_string()));
        Ok(self)
    }

    /// Replaces every occurrence of `text` verbatim.
    pub fn with_literal(self, text: &str, replacement: &str) -> Self {
        self.with_pattern(&regex::escape(text), &replacement.replace('$', "$$"))
            .expect("escaped literal")
    }

    /// Puts a literal rule ahead of the others, so a specific path is replaced
    /// before a general pattern can touch it.
    pub fn with_literal_first(mut self, text: &str, replacement: &str) -> Self {
        let re = Regex::new(&regex::escape(text)).expect("escaped literal");
        self.rules.insert(0, (re, replacement.replace('$', "$$")));
        self
    }

    pub fn apply(&self, text: &str) -> String {
        let mut out = text.to_string();
        for (re, rep) in &self.rules {
            if re.is_match(&out) {
                out = re.replace_all(&out, rep.as_str()).into_owned();
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub timestamp: NaiveDateTime,
    /// None for banners and payloads.
    pub speaker: Option<Speaker>,
    pub text: String,
}

impl LogEntry {
    pub fn render(&self) -> String {
        let prefix = match self.speaker {
            Some(Speaker::Pear) => "PEAR: ",
            Some(Speaker::User) => "User: ",
            Some(Speaker::Agent) => "Agent: ",
            None => "",
        };
        format!("{} - {prefix}{}\n", self.timestamp.format(TIME_FORMAT), self.text)
    }
}

pub fn render_entries(entries: &[LogEntry]) -> String {
    entries.iter().map(LogEntry::render).collect()
}

/// The nine values of the settings banner.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BannerSettings {
    pub automation_level: u8,
    pub llm: String,
    pub knowledge_base: String,
    pub data_directory: String,
    pub script_directory: String,
    pub user_name: String,
    pub computer_name: String,
    pub matlab_directory: String,
    pub external_script: String,
}

pub const BANNER_KEYS: [&str; 9] = [
    "Automation level",
    "LLM",
    "Knowledge base",
    "Data's base directory",
    "Script directory",
    "User name",
    "Computer name",
    "Matlab directory",
    "External reconstruction script",
];

impl BannerSettings {
    pub fn lines(&self) -> Vec<String> {
        let values = [
            self.automation_level.to_string(),
            self.llm.clone(),
            self.knowledge_base.clone(),
            self.data_directory.clone(),
            self.script_directory.clone(),
            self.user_name.clone(),
            self.computer_name.clone(),
            self.matlab_directory.clone(),
            self.external_script.clone(),
        ];
        BANNER_KEYS.iter().zip(values).map(|(k, v)| format!("{k}: {v}")).collect()
    }
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("cannot write the session log {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

struct Inner {
    file: Option<File>,
    entries: Vec<LogEntry>,
    text: String,
}

/// An append-only session log. Every entry is flushed to disk before
/// `append` returns.
pub struct SessionLog {
    path: Option<PathBuf>,
    clock: Arc<dyn Clock>,
    redactor: Redactor,
    inner: Mutex<Inner>,
}

impl SessionLog {
    pub fn create(path: &Path, clock: Arc<dyn Clock>, redactor: Redactor) -> Result<Self, LogError> {
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(path)
            .map_err(|source| LogError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        Ok(Self {
            path: Some(path.to_path_buf()),
            clock,
            redactor,
            inner: Mutex::new(Inner {
                file: Some(file),
                entries: Vec::new(),
                text: String::new(),
            }),
        })
    }

    /// A log kept only in memory.
    pub fn in_memory(clock: Arc<dyn Clock>, redactor: Redactor) -> Self {
        Self {
            path: None,
            clock,
            redactor,
            inner: Mutex::new(Inner {
                file: None,
                entries: Vec::new(),
                text: String::new(),
            }),
        }
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn append(&self, speaker: Option<Speaker>, text: &str) -> Result<LogEntry, LogError> {
        let entry = LogEntry {
            timestamp: self.clock.now().with_nanosecond_zero(),
            speaker,
            text: self.redactor.apply(text),
        };
        let line = entry.render();
        let mut inner = self.inner.lock().expect("log lock");
        if let Some(f) = inner.file.as_mut() {
            f.write_all(line.as_bytes())
                .and_then(|_| f.flush())
                .map_err(|source| LogError::Io {
                    path: self.path.clone().unwrap_or_default(),
                    source,
                })?;
        }
        inner.text.push_str(&line);
        inner.entries.push(entry.clone());
        Ok(entry)
    }

    pub fn pear(&self, text: &str) -> Result<LogEntry, LogError> {
        self.append(Some(Speaker::Pear), text)
    }

    pub fn user(&self, text: &str) -> Result<LogEntry, LogError> {
        self.append(Some(Speaker::User), text)
    }

    pub fn agent(&self, role: AgentRole) -> Result<LogEntry, LogError> {
        self.append(Some(Speaker::Agent), role.marker())
    }

    /// A line with no speaker: banners, summaries, payloads.
    pub fn plain(&self, text: &str) -> Result<LogEntry, LogError> {
        self.append(None, text)
    }

    pub fn settings_banner(&self, s: &BannerSettings) -> Result<(), LogError> {
        self.plain(SETTINGS_BANNER)?;
        for line in s.lines() {
            self.plain(&line)?;
        }
        self.plain(BANNER_END)?;
        Ok(())
    }

    pub fn entries(&self) -> Vec<LogEntry> {
        self.inner.lock().expect("log lock").entries.clone()
    }

    pub fn text(&self) -> String {
        self.inner.lock().expect("log lock").text.clone()
    }
}

trait NoNanos {
    fn with_nanosecond_zero(self) -> Self;
}

impl NoNanos for NaiveDateTime {
    fn with_nanosecond_zero(self) -> Self {
        use chrono::Timelike;
        self.with_nanosecond(0).unwrap_or(self)
    }
}

// ---------------------------------------------------------------------------
// Replay

static HEADER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^(\d{8}-\d{2}:\d{2}:\d{2}) - (.*)$").expect("header pattern"));

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("session log line {line}: {message}")]
pub struct ReplayParseError {
    pub line: usize,
    pub message: String,
}

/// What a session log records.
#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    pub entries: Vec<LogEntry>,
    /// Every `User:` reply, in order.
    pub replies: Vec<String>,
    /// Every parameter block shown, in order.
    pub param_blocks: Vec<ReconstructionParams>,
    /// The parameters in effect at each reconstruction.
    pub reconstruction_params: Vec<ReconstructionParams>,
    /// Agent markers in order.
    pub agents: Vec<String>,
}

impl Replay {
    pub fn reconstructions(&self) -> usize {
        self.reconstruction_params.len()
    }

    pub fn final_params(&self) -> Option<&ReconstructionParams> {
        self.param_blocks.last()
    }

    pub fn render(&self) -> String {
        render_entries(&self.entries)
    }
}

/// Splits a log into entries. Lines without a timestamp continue the entry
/// above them.
pub fn parse_log(text: &str) -> Result<Vec<LogEntry>, ReplayParseError> {
    let mut entries: Vec<LogEntry> = Vec::new();
    let body = text.strip_suffix('\n').unwrap_or(text);
    if body.is_empty() {
        return Ok(entries);
    }
    for (i, line) in body.split('\n').enumerate() {
        if let Some(c) = HEADER.captures(line) {
            let timestamp = NaiveDateTime::parse_from_str(&c[1], TIME_FORMAT).map_err(|e| ReplayParseError {
                line: i + 1,
                message: format!("bad timestamp: {e}"),
            })?;
            let rest = &c[2];
            let (speaker, text) = if let Some(t) = rest.strip_prefix("PEAR: ") {
                (Some(Speaker::Pear), t)
            } else if let Some(t) = rest.strip_prefix("User: ") {
                (Some(Speaker::User), t)
            } else if let Some(t) = rest.strip_prefix("Agent: ") {
                (Some(Speaker::Agent), t)
            } else {
                (None, rest)
            };
            entries.push(LogEntry {
                timestamp,
                speaker,
                text: text.to_string(),
            });
        } else {
            let Some(last) = entries.last_mut() else {
                return Err(ReplayParseError {
                    line: i + 1,
                    message: "text before the first timestamp".into(),
                });
            };
            last.text.push('\n');
            last.text.push_str(line);
        }
    }
    Ok(entries)
}

/// Reads a session log back.
pub fn replay(text: &str) -> Result<Replay, ReplayParseError> {
    let entries = parse_log(text)?;
    let mut out = Replay {
        entries: Vec::new(),
        replies: Vec::new(),
        param_blocks: Vec::new(),
        reconstruction_params: Vec::new(),
        agents: Vec::new(),
    };
    // a block shown while confirming is an edit to the round's parameters
    let mut confirming = false;
    for e in &entries {
        match e.speaker {
            Some(Speaker::User) => out.replies.push(e.text.clone()),
            Some(Speaker::Agent) => {
                confirming = e.text == AgentRole::ParamsConfirmer.marker();
                out.agents.push(e.text.clone());
            }
            Some(Speaker::Pear) => {}
            None if e.text.starts_with("########## Reconstruction No.") => {
                if let Some(p) = out.param_blocks.last() {
                    out.reconstruction_params.push(p.clone());
                }
            }
            None if e.text.starts_with('{') => {
                if let Ok(p) = parse_params(&e.text) {
                    if confirming {
                        if let Some(last) = out.reconstruction_params.last_mut() {
                            *last = p.clone();
                        }
                    }
                    out.param_blocks.push(p);
                }
            }
            None => {}
        }
    }
    out.entries = entries;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CASE: &str = include_str!("../tests/fixtures/casestudy_session.log");

    fn t0() -> NaiveDateTime {
        NaiveDateTime::parse_from_str("20240913-00:02:56", TIME_FORMAT).unwrap()
    }

    #[test]
    fn line_formats() {
        let log = SessionLog::in_memory(Arc::new(FixedClock::constant(t0())), Redactor::none());
        log.pear("Hello User. Thank you for letting me assist with your ptychographic reconstruction today.")
            .unwrap();
        log.plain(SETTINGS_BANNER).unwrap();
        log.agent(AgentRole::ParamsCollector).unwrap();
        log.agent(AgentRole::ConversationSummarizer).unwrap();
        log.plain("[init] : Preparing paths.\nElapsed time is 1 seconds.\n").unwrap();
        assert_eq!(
            log.text(),
            "20240913-00:02:56 - PEAR: Hello User. Thank you for letting me assist with your ptychographic reconstruction today.\n\
             20240913-00:02:56 - ########## Settings ##########\n\
             20240913-00:02:56 - Agent: ParamsCollector\n\
             20240913-00:02:56 - Agent: _summarize_conversation\n\
             20240913-00:02:56 - [init] : Preparing paths.\nElapsed time is 1 seconds.\n\n"
        );
    }

    #[test]
    fn banner_has_nine_keys_in_order() {
        let log = SessionLog::in_memory(Arc::new(FixedClock::constant(t0())), Redactor::none());
        let s = BannerSettings {
            automation_level: 1,
            llm: "gpt-4o-mini".into(),
            knowledge_base: "neurips_demo".into(),
            data_directory: "/d/".into(),
            script_directory: "/d/ptycho".into(),
            user_name: "User".into(),
            computer_name: "lamda".into(),
            matlab_directory: "/usr/local/bin/matlab".into(),
            external_script: String::new(),
        };
        log.settings_banner(&s).unwrap();
        let lines: Vec<String> = log.entries().iter().map(|e| e.text.clone()).collect();
        assert_eq!(lines.len(), 11);
        assert_eq!(lines[0], SETTINGS_BANNER);
        assert_eq!(lines[10], BANNER_END);
        for (line, key) in lines[1..10].iter().zip(BANNER_KEYS) {
            assert!(line.starts_with(&format!("{key}: ")), "{line}");
        }
        assert!(log.text().contains("External reconstruction script: \n"));
    }

    #[test]
    fn stepping_clock() {
        let c = FixedClock::new(t0(), 2);
        assert_eq!(c.now(), t0());
        assert_eq!(c.now(), t0() + TimeDelta::seconds(2));
    }

    #[test]
    fn redaction() {
        let r = Redactor::default().with_literal_first("/home/alice/data", "/Modified/to/Hide/User/Info");
        assert_eq!(r.apply("key sk-abcdefghijklmnopqrstuv"), "key [REDACTED]");
        assert_eq!(r.apply("api_key=secret123 rest"), "api_key=[REDACTED] rest");
        assert_eq!(r.apply("/home/bob/x.mat"), "/home/[REDACTED]/x.mat");
        assert_eq!(r.apply("/home/alice/data/ptycho"), "/Modified/to/Hide/User/Info/ptycho");
    }

    #[test]
    fn writes_and_flushes_to_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = log_path(dir.path(), "abc");
        let log = SessionLog::create(&path, Arc::new(FixedClock::constant(t0())), Redactor::none()).unwrap();
        log.user("31").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "20240913-00:02:56 - User: 31\n");
        assert!(path.ends_with("pear_abc.log"));
    }

    #[test]
    fn case_study_replay() {
        let r = replay(CASE).unwrap();
        assert_eq!(r.render(), CASE);
        assert_eq!(r.reconstructions(), 4);
        assert_eq!(r.param_blocks.len(), 6);
        assert_eq!(r.final_params().unwrap().diff_pattern_blur, 2.0);
        assert_eq!(r.reconstruction_params[0].number_of_iterations, 50);
        assert_eq!(r.reconstruction_params[3].update_batch_size, 256);
        assert_eq!(r.reconstruction_params[3].diff_pattern_blur, 1.5);
        assert_eq!(r.replies.first().map(String::as_str), Some("31"));
        assert_eq!(r.replies.last().map(String::as_str), Some("no"));
        assert_eq!(r.entries[0].text, "Initializaing PEAR...");
        assert_eq!(r.entries[0].speaker, None);
    }

    #[test]
    fn empty_and_bad_logs() {
        assert!(replay("").unwrap().entries.is_empty());
        let err = parse_log("stray text\n").unwrap_err();
        assert_eq!(err.line, 1);
    }
}
