//! Runs one tuning session: questions, recommendations, confirmation, then
//! rounds of script generation, execution and feedback.
//!
//! The runner does the work each stage calls for and feeds the outcome to
//! [`machine::step`]; the recorded event list folds back to the final state.

pub mod machine;

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::collect::{collect_parameters, Extracted};
use crate::agents::confirm::interpret_edit;
use crate::agents::feedback::{assess_quality_auto, interpret_quality, quality_dialogue, QUALITY_QUESTIONS};
use crate::agents::questions::{generate_questions, Question};
use crate::agents::recommend::{recommend_initial, recommend_updates};
use crate::agents::summarize::{report_item, summarize};
use crate::agents::{AgentContext, AgentError, AgentRole, ChatTurn, Speaker};
use crate::executor::{self, execute, generate_script, script_file_name, write_driver, ExecMode, DRIVER_NAME};
use crate::kb::{KbError, KnowledgeBase};
use crate::llm::{Gateway, LlmError};
use crate::params::{to_canonical_text, ReconstructionParams};
use crate::rulebook::{QualityReport, RuleSet};
use crate::session_log::{log_path, reconstruction_banner, BannerSettings, Clock, LogEntry, LogError, Redactor, SessionLog};
pub use machine::{fold, step, Action, Event, IllegalEvent, SessionState, Stage, ABORT_TOKEN, DEFAULT_MAX_ROUNDS};

pub const CONFIRM_PROMPT: &str = "Let me know any changes you would like to make. If it looks good to you, please say \"LGTM\".";
pub const CONTINUE_PROMPT: &str = "Do you want to run another reconstruction? If so, please say \"yes\".";
pub const FAREWELL: &str = "Reconstructions completed. Have a nice day!";

/// Times an unreadable answer is asked again.
pub const MAX_REASKS: u32 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSettings {
    pub automation_level: u8,
    pub model: String,
    pub data_directory: String,
    pub script_directory: PathBuf,
    /// Where the driver file is written and scripts are run.
    pub working_directory: PathBuf,
    pub user_name: String,
    pub computer_name: String,
    #[serde(skip, default = "default_exec")]
    pub exec: ExecMode,
    pub external_script: String,
    pub max_rounds: u32,
    pub session_id: String,
}

fn default_exec() -> ExecMode {
    ExecMode::Mock(Default::default())
}

impl SessionSettings {
    pub fn new(level: u8, model: &str, data_directory: &str, script_directory: &Path) -> Self {
        Self {
            automation_level: level,
            model: model.to_string(),
            data_directory: data_directory.to_string(),
            script_directory: script_directory.to_path_buf(),
            working_directory: script_directory.to_path_buf(),
            user_name: "User".into(),
            computer_name: "localhost".into(),
            exec: default_exec(),
            external_script: String::new(),
            max_rounds: DEFAULT_MAX_ROUNDS,
            session_id: uuid::Uuid::new_v4().simple().to_string(),
        }
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        if self.automation_level > 2 {
            return Err(SessionError::Settings(format!(
                "automation level must be 0, 1 or 2, not {}",
                self.automation_level
            )));
        }
        if self.max_rounds == 0 {
            return Err(SessionError::Settings("max_rounds must be at least 1".into()));
        }
        let probe = self.script_directory.join(format!(".pear_write_test_{}", self.session_id));
        std::fs::write(&probe, b"")
            .and_then(|_| std::fs::remove_file(&probe))
            .map_err(|e| SessionError::Settings(format!("script directory {} is not writable: {e}", self.script_directory.display())))
    }

    fn banner(&self, kb: &str) -> BannerSettings {
        BannerSettings {
            automation_level: self.automation_level,
            llm: self.model.clone(),
            knowledge_base: kb.to_string(),
            data_directory: self.data_directory.clone(),
            script_directory: self.script_directory.display().to_string(),
            user_name: self.user_name.clone(),
            computer_name: self.computer_name.clone(),
            matlab_directory: match &self.exec {
                ExecMode::External { command, .. } => command.clone(),
                ExecMode::Mock(_) => "mock".into(),
            },
            external_script: self.external_script.clone(),
        }
    }
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("invalid settings: {0}")]
    Settings(String),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    Log(#[from] LogError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplyError {
    #[error("no more replies")]
    Closed,
    #[error("no reply within {0:?}")]
    Timeout(Duration),
}

/// Where human replies come from.
pub trait ReplySource {
    fn next_reply(&mut self, prompt: &str) -> Result<String, ReplyError>;
}

/// Replies from a fixed list.
#[derive(Debug, Clone, Default)]
pub struct ScriptedReplies {
    replies: std::collections::VecDeque<String>,
    pub prompts: Vec<String>,
}

impl ScriptedReplies {
    pub fn new<I: IntoIterator<Item = S>, S: Into<String>>(replies: I) -> Self {
        Self {
            replies: replies.into_iter().map(Into::into).collect(),
            prompts: Vec::new(),
        }
    }

    pub fn remaining(&self) -> usize {
        self.replies.len()
    }
}

impl ReplySource for ScriptedReplies {
    fn next_reply(&mut self, prompt: &str) -> Result<String, ReplyError> {
        self.prompts.push(prompt.to_string());
        self.replies.pop_front().ok_or(ReplyError::Closed)
    }
}

impl<F: FnMut(&str) -> Result<String, ReplyError>> ReplySource for F {
    fn next_reply(&mut self, prompt: &str) -> Result<String, ReplyError> {
        self(prompt)
    }
}

/// What a session reports while it runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SessionEvent {
    Stage { stage: Stage },
    Message { entry: LogEntry },
    AwaitingReply { prompt: String },
    Parameters { params: ReconstructionParams },
    Finished { stage: Stage, reconstructions: u32, cause: Option<String> },
}

pub trait EventSink: Send + Sync {
    fn emit(&self, event: SessionEvent);
}

pub struct NullSink;

impl EventSink for NullSink {
    fn emit(&self, _: SessionEvent) {}
}

impl<F: Fn(SessionEvent) + Send + Sync> EventSink for F {
    fn emit(&self, event: SessionEvent) {
        self(event)
    }
}

/// What a session needs besides its settings.
#[derive(Clone)]
pub struct SessionDeps<'a> {
    pub gateway: &'a Gateway,
    pub kb: &'a KnowledgeBase,
    pub clock: Arc<dyn Clock>,
    pub redactor: Redactor,
    pub cancel: CancelFlag,
}

/// Set from another thread to end a session before its next step.
#[derive(Debug, Clone, Default)]
pub struct CancelFlag(Arc<std::sync::atomic::AtomicBool>);

impl CancelFlag {
    pub fn cancel(&self) {
        self.0.store(true, std::sync::atomic::Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.0.load(std::sync::atomic::Ordering::SeqCst)
    }
}

#[derive(Debug, Clone)]
pub struct SessionOutcome {
    pub state: SessionState,
    pub events: Vec<Event>,
    pub log_path: PathBuf,
    pub log_text: String,
    pub scripts: Vec<PathBuf>,
    /// Ground-truth scores from the mock engine, one per reconstruction.
    pub mock_scores: Vec<f64>,
    /// Quality reports, one per reconstruction.
    pub reports: Vec<QualityReport>,
    /// Agent replies that could not be used and were replaced.
    pub fallbacks: u32,
    /// Rounds whose automatic assessment fell back to the user.
    pub human_quality_rounds: u32,
}

/// A reason to leave the stage loop early.
enum Stop {
    Reply(ReplyError),
    Log(LogError),
}

impl From<LogError> for Stop {
    fn from(e: LogError) -> Self {
        Stop::Log(e)
    }
}

struct Runner<'a, 'r> {
    settings: &'a SessionSettings,
    deps: SessionDeps<'a>,
    rules: RuleSet,
    log: SessionLog,
    replies: &'r mut dyn ReplySource,
    sink: &'r dyn EventSink,
    state: SessionState,
    events: Vec<Event>,
    questions: Vec<Question>,
    answers: Vec<String>,
    extracted: Vec<Extracted>,
    quality_answers: Option<[String; 5]>,
    last_image: Option<PathBuf>,
    round_summary: String,
    out: Outcome,
}

#[derive(Default)]
struct Outcome {
    scripts: Vec<PathBuf>,
    mock_scores: Vec<f64>,
    reports: Vec<QualityReport>,
    fallbacks: u32,
    human_quality_rounds: u32,
}

impl<'r> Runner<'_, 'r> {
    fn ctx(&self) -> AgentContext<'_> {
        AgentContext {
            gateway: self.deps.gateway,
            kb: self.deps.kb,
            rules: &self.rules,
        }
    }

    fn emit_entry(&self, entry: LogEntry) {
        self.sink.emit(SessionEvent::Message { entry });
    }

    fn say(&self, text: &str) -> Result<(), LogError> {
        let e = self.log.pear(text)?;
        self.emit_entry(e);
        Ok(())
    }

    fn plain(&self, text: &str) -> Result<(), LogError> {
        let e = self.log.plain(text)?;
        self.emit_entry(e);
        Ok(())
    }

    fn marker(&self, role: AgentRole) -> Result<(), LogError> {
        let e = self.log.agent(role)?;
        self.emit_entry(e);
        Ok(())
    }

    fn params_block(&self, params: &ReconstructionParams) -> Result<(), LogError> {
        self.plain(to_canonical_text(params).trim_end())?;
        self.sink.emit(SessionEvent::Parameters { params: params.clone() });
        Ok(())
    }

    /// Asks `prompt` (already logged) and logs the reply.
    fn ask(&mut self, prompt: &str) -> Result<String, Stop> {
        self.sink.emit(SessionEvent::AwaitingReply { prompt: prompt.to_string() });
        let reply = self.replies.next_reply(prompt).map_err(Stop::Reply)?;
        let e = self.log.user(&reply)?;
        self.emit_entry(e);
        Ok(reply)
    }

    fn say_and_ask(&mut self, prompt: &str) -> Result<String, Stop> {
        self.say(prompt)?;
        self.ask(prompt)
    }

    /// Applies one event and returns the actions it produced.
    fn apply(&mut self, event: Event) -> Vec<Action> {
        match step(&self.state, &event) {
            Ok((next, actions)) => {
                if next.stage != self.state.stage {
                    self.sink.emit(SessionEvent::Stage { stage: next.stage });
                }
                self.state = next;
                self.events.push(event);
                actions
            }
            Err(e) => {
                // the runner only sends legal events; treat a slip as a failure
                tracing::error!(error = %e, "illegal event");
                let failed = Event::Failed(e.to_string());
                let (next, actions) = step(&self.state, &failed).expect("failure is always legal");
                self.state = next;
                self.events.push(failed);
                actions
            }
        }
    }

    fn fail(&mut self, cause: impl std::fmt::Display) -> Vec<Action> {
        self.apply(Event::Failed(cause.to_string()))
    }

    fn params(&self) -> ReconstructionParams {
        self.state.params.clone().unwrap_or_default()
    }

    fn start(&mut self) -> Result<Vec<Action>, Stop> {
        self.plain("Initializing PEAR...")?;
        self.log.settings_banner(&self.settings.banner(&self.deps.kb.name))?;
        for e in self.log.entries().into_iter().skip(1) {
            self.emit_entry(e);
        }
        match write_driver(&self.settings.working_directory) {
            Ok(d) => {
                if d.overwritten {
                    self.say("A driver file exists in the current working directory, it will be overwritten.")?;
                }
                self.say(&format!("Driver file created at {DRIVER_NAME}"))?;
            }
            Err(e) => return Ok(self.fail(format!("cannot write the driver file: {e}"))),
        }
        self.say(&format!(
            "Hello {}. Thank you for letting me assist with your ptychographic reconstruction today.",
            self.settings.user_name
        ))?;
        Ok(self.apply(Event::Started))
    }

    fn ask_questions(&mut self) -> Result<Vec<Action>, Stop> {
        self.marker(AgentRole::ParamsCollector)?;
        self.say("First I'd like to ask some questions about your data:")?;
        for q in self.questions.clone() {
            let reply = self.say_and_ask(&q.text)?;
            let actions = self.apply(Event::UserReply(reply.clone()));
            if self.state.stage != Stage::Ask {
                return Ok(actions);
            }
            self.answers.push(reply);
        }
        Ok(self.apply(Event::Answered))
    }

    fn collect(&mut self) -> Result<Vec<Action>, Stop> {
        let mut base = ReconstructionParams::default();
        base.data_directory = self.settings.data_directory.clone();
        let mut reasks = 0;
        loop {
            let pairs: Vec<(Question, String)> = self.questions.iter().cloned().zip(self.answers.iter().cloned()).collect();
            match collect_parameters(&self.ctx(), &pairs, &base) {
                Ok(c) => {
                    self.extracted = c.extracted;
                    self.say("Thank you for answering my questions.")?;
                    return Ok(self.apply(Event::Collected {
                        params: c.params,
                        facts: c.facts,
                    }));
                }
                Err(AgentError::Extraction { unmapped }) if reasks < MAX_REASKS => {
                    reasks += 1;
                    for id in unmapped {
                        let Some(i) = self.questions.iter().position(|q| q.id == id) else {
                            continue;
                        };
                        self.say("I could not use your answer to the next question. Could you answer it again?")?;
                        let text = self.questions[i].text.clone();
                        let reply = self.say_and_ask(&text)?;
                        let actions = self.apply(Event::UserReply(reply.clone()));
                        if self.state.stage != Stage::Collect {
                            return Ok(actions);
                        }
                        self.answers[i] = reply;
                    }
                }
                Err(e) => return Ok(self.fail(e)),
            }
        }
    }

    fn summary_bullets(&mut self, turns: &[ChatTurn], items: &[Extracted]) -> Result<String, Stop> {
        self.marker(AgentRole::ConversationSummarizer)?;
        self.say("Summarizing previous conversation...")?;
        let s = match summarize(&self.ctx(), turns, items) {
            Ok(s) => s,
            Err(e) => {
                tracing::warn!(error = %e, "summary skipped");
                return Ok(String::new());
            }
        };
        if s.fallback {
            self.out.fallbacks += 1;
        }
        if !s.bullets.is_empty() {
            let logged: Vec<String> = s.bullets.iter().map(|b| format!("{b}  ")).collect();
            self.plain(&logged.join("\n"))?;
        }
        Ok(s.text())
    }

    fn initial_turns(&self) -> Vec<ChatTurn> {
        self.questions
            .iter()
            .zip(&self.answers)
            .flat_map(|(q, a)| [ChatTurn::pear(q.text.clone()), ChatTurn::user(a.clone())])
            .collect()
    }

    fn recommend(&mut self) -> Result<Vec<Action>, Stop> {
        self.marker(AgentRole::ParamsRecommender)?;
        self.say("Next I will initialize some reconstruction parameters based on your inputs.")?;
        let turns = self.initial_turns();
        let items = self.extracted.clone();
        let summary = self.summary_bullets(&turns, &items)?;
        let facts = self.state.facts.clone().expect("facts are collected before recommending");
        match recommend_initial(&self.ctx(), &summary, &facts, &self.params()) {
            Ok(r) => {
                if r.fallback {
                    self.out.fallbacks += 1;
                }
                self.say(&format!(
                    "Based on the provided information and the recommendations, here are the suggested reconstruction parameters:\n\n{}",
                    r.explanation
                ))?;
                Ok(self.apply(Event::Recommended { params: r.params }))
            }
            Err(e) => Ok(self.fail(e)),
        }
    }

    fn format(&mut self) -> Result<Vec<Action>, Stop> {
        self.marker(AgentRole::ParamsFormatter)?;
        self.say("Here are the current parameters:")?;
        self.params_block(&self.params())?;
        Ok(self.apply(Event::Formatted))
    }

    fn confirm(&mut self, first: bool) -> Result<Vec<Action>, Stop> {
        if first {
            self.plain(&reconstruction_banner(self.state.counter + 1))?;
            self.marker(AgentRole::ParamsConfirmer)?;
        }
        if self.state.level == 2 {
            self.say("Automation level 2: the parameters are confirmed without asking.")?;
            let actions = self.apply(Event::AutoConfirmed);
            self.say("I will create a reconstruction script using these parameters.")?;
            return Ok(actions);
        }
        let reply = self.say_and_ask(CONFIRM_PROMPT)?;
        let actions = self.apply(Event::UserReply(reply));
        if self.state.stage == Stage::Generate {
            self.say("Thank you for the feedback. I will create a reconstruction script using these parameters.")?;
        }
        Ok(actions)
    }

    fn edit(&mut self, request: &str) -> Result<Vec<Action>, Stop> {
        match interpret_edit(&self.ctx(), &self.params(), request) {
            Ok(out) => {
                if !out.applied.is_empty() {
                    self.say("Here are the updated parameters:")?;
                    self.params_block(&out.params)?;
                }
                if let Some(msg) = out.refusal_message() {
                    self.say(&msg)?;
                }
                if out.applied.is_empty() && out.refused.is_empty() {
                    self.say("I did not find any parameter changes in your message.")?;
                }
                Ok(self.apply(Event::Edited { params: out.params }))
            }
            Err(AgentError::Llm(e)) => {
                tracing::warn!(error = %e, "edit not understood");
                self.out.fallbacks += 1;
                self.say("I could not understand the requested changes. Could you phrase them differently?")?;
                Ok(self.apply(Event::Edited { params: self.params() }))
            }
            Err(e) => Ok(self.fail(e)),
        }
    }

    fn generate(&mut self) -> Result<Vec<Action>, Stop> {
        self.marker(AgentRole::ScriptGenerator)?;
        self.say("Generating a reconstruction script...")?;
        let n = self.state.counter + 1;
        let name = script_file_name(&self.deps.kb.name, &self.settings.model, self.settings.automation_level, n);
        let template = match self.deps.kb.script_template() {
            Ok(t) => t,
            Err(e) => return Ok(self.fail(e)),
        };
        match generate_script(&self.params(), &template, &self.settings.script_directory, &name, n) {
            Ok(a) => {
                self.say(&format!("The reconstruction script has been generated at {}", a.path.display()))?;
                self.out.scripts.push(a.path.clone());
                Ok(self.apply(Event::Generated {
                    path: a.path.display().to_string(),
                }))
            }
            Err(e) => Ok(self.fail(e)),
        }
    }

    fn run_script(&mut self) -> Result<Vec<Action>, Stop> {
        self.marker(AgentRole::ScriptRunner)?;
        self.say("Running ptychographic reconstruction...")?;
        let script = self.out.scripts.last().cloned().expect("a script was generated");
        let mode = &self.settings.exec;
        self.say(&format!(
            "Executing script using {} on {}...",
            mode.command_name(),
            self.settings.computer_name
        ))?;
        let line = mode.command_line(&script);
        self.say(&format!("The MATLAB command used for reconstruction: {line} "))?;
        self.say(&format!("Executing command {line} "))?;
        let artifact = executor::ScriptArtifact {
            path: script,
            text: String::new(),
            params: self.params(),
            n: self.state.counter,
        };
        match execute(&artifact, mode, &self.settings.working_directory) {
            Ok(result) => {
                let mut output = result.output.clone();
                if !output.ends_with('\n') {
                    output.push('\n');
                }
                self.plain(&output)?;
                self.say("Your command execution is successful :) Please take a look and give me some feedback.")?;
                if let Some(s) = result.mock_score {
                    self.out.mock_scores.push(s);
                }
                self.last_image = result.image_path.clone();
                Ok(self.apply(Event::RunFinished))
            }
            Err(e) => {
                self.say(&format!("The reconstruction failed: {e}"))?;
                Ok(self.fail(e))
            }
        }
    }

    fn quality(&mut self) -> Result<Vec<Action>, Stop> {
        self.quality_answers = None;
        if self.state.level == 2 {
            self.marker(AgentRole::QualityAssessor)?;
            self.say("Assessing the reconstruction images...")?;
            let png = self.last_image.as_ref().and_then(|p| std::fs::read(p).ok());
            let assessed = match png {
                Some(bytes) => assess_quality_auto(&self.ctx(), &bytes),
                None => Err(AgentError::Llm(LlmError::Provider {
                    status: None,
                    body: "no reconstruction image to assess".into(),
                })),
            };
            match assessed {
                Ok(report) => {
                    self.say("Here is my assessment of the reconstruction.")?;
                    return Ok(self.report(report));
                }
                Err(e) => {
                    self.out.human_quality_rounds += 1;
                    self.say(&format!("I cannot assess the images automatically ({e}), so I will ask you instead."))?;
                }
            }
        }
        self.marker(AgentRole::QualityCollector)?;
        self.say("Please check your reconstructions and answer some questions:")?;
        let mut answers: Vec<String> = Vec::with_capacity(5);
        for q in QUALITY_QUESTIONS {
            let reply = self.say_and_ask(q)?;
            let actions = self.apply(Event::UserReply(reply.clone()));
            if self.state.stage != Stage::Quality {
                return Ok(actions);
            }
            answers.push(reply);
        }
        let answers: [String; 5] = answers.try_into().expect("five answers");
        self.say("Thank you for your feedback!")?;
        let outcome = match interpret_quality(&self.ctx(), &answers) {
            Ok(o) => o,
            Err(e) => return Ok(self.fail(e)),
        };
        if outcome.fallback {
            self.out.fallbacks += 1;
        }
        self.quality_answers = Some(answers);
        Ok(self.report(outcome.report))
    }

    fn report(&mut self, report: QualityReport) -> Vec<Action> {
        self.out.reports.push(report.clone());
        self.apply(Event::QualityReported(report))
    }

    fn summarize_round(&mut self) -> Result<Vec<Action>, Stop> {
        if self.state.level >= 1 {
            self.marker(AgentRole::UpdatesRecommender)?;
            self.say("Next I will suggest some changes to the parameters:")?;
        }
        let report = self.state.last_report.clone().expect("a report precedes the summary");
        let turns = self.quality_answers.as_ref().map(quality_dialogue).unwrap_or_default();
        let summary = self.summary_bullets(&turns, &[report_item(&report)])?;
        self.round_summary = summary;
        Ok(self.apply(Event::Summarized))
    }

    fn update(&mut self) -> Result<Vec<Action>, Stop> {
        let report = self.state.last_report.clone().expect("a report precedes the update");
        let summary = std::mem::take(&mut self.round_summary);
        match recommend_updates(&self.ctx(), &summary, &report, &self.params()) {
            Ok(r) => {
                if r.fallback {
                    self.out.fallbacks += 1;
                }
                self.plain(&r.explanation)?;
                self.marker(AgentRole::ParamsUpdater)?;
                self.say("Here are the updated parameters that will be used to create the next reconstruction script")?;
                self.params_block(&r.params)?;
                Ok(self.apply(Event::Updated { params: r.params }))
            }
            Err(e) => Ok(self.fail(e)),
        }
    }

    fn continue_prompt(&mut self) -> Result<Vec<Action>, Stop> {
        let reply = self.say_and_ask(CONTINUE_PROMPT)?;
        Ok(self.apply(Event::UserReply(reply)))
    }

    fn decide(&mut self) -> Result<Vec<Action>, Stop> {
        let clean = self.state.last_report.as_ref().is_some_and(QualityReport::is_clean);
        if clean {
            self.say("The reconstruction shows no remaining problems, so no further reconstruction is needed.")?;
        } else if self.state.counter >= self.state.max_rounds {
            self.say(&format!("The limit of {} reconstructions has been reached.", self.state.max_rounds))?;
        } else {
            self.say("I will run another reconstruction with the updated parameters.")?;
        }
        Ok(self.apply(Event::AutoDecide))
    }

    fn run(&mut self) -> Result<(), Stop> {
        let mut actions = self.start()?;
        let mut fresh_confirm = true;
        while let Some(mut action) = actions.first().cloned() {
            if self.deps.cancel.is_cancelled() && !matches!(action, Action::Finish | Action::Abort(_)) {
                actions = self.fail("aborted by the user");
                action = actions.first().cloned().expect("failure yields an abort");
            }
            actions = match action {
                Action::AskQuestions => self.ask_questions()?,
                Action::CollectParameters => self.collect()?,
                Action::RecommendInitial => self.recommend()?,
                Action::FormatParameters => self.format()?,
                Action::PromptConfirmation => {
                    let a = self.confirm(fresh_confirm)?;
                    fresh_confirm = false;
                    a
                }
                Action::InterpretEdit(r) => self.edit(&r)?,
                Action::GenerateScript => {
                    fresh_confirm = true;
                    self.generate()?
                }
                Action::RunScript => self.run_script()?,
                Action::CollectQuality => self.quality()?,
                Action::Summarize => self.summarize_round()?,
                Action::RecommendUpdates => self.update()?,
                Action::PromptContinue => self.continue_prompt()?,
                Action::DecideContinue => self.decide()?,
                Action::Finish => {
                    self.say(FAREWELL)?;
                    break;
                }
                Action::Abort(cause) => {
                    self.say(&format!("Session aborted: {cause}"))?;
                    break;
                }
            };
        }
        Ok(())
    }
}

/// Runs a session to the end. Setup problems are errors; anything that goes
/// wrong once the session is under way ends it in [`Stage::Aborted`] with
/// the cause in the log.
pub fn run_session(
    settings: &SessionSettings,
    deps: SessionDeps<'_>,
    replies: &mut dyn ReplySource,
    sink: &dyn EventSink,
) -> Result<SessionOutcome, SessionError> {
    settings.validate()?;
    let rules = deps.kb.rules()?;
    let questions = generate_questions(deps.kb)?;
    let path = log_path(&settings.script_directory, &settings.session_id);
    let log = SessionLog::create(&path, deps.clock.clone(), deps.redactor.clone())?;
    let mut runner = Runner {
        settings,
        deps,
        rules,
        log,
        replies,
        sink,
        state: SessionState::new(settings.automation_level, settings.max_rounds),
        events: Vec::new(),
        questions,
        answers: Vec::new(),
        extracted: Vec::new(),
        quality_answers: None,
        last_image: None,
        round_summary: String::new(),
        out: Outcome::default(),
    };
    match runner.run() {
        Ok(()) => {}
        Err(Stop::Log(e)) => return Err(e.into()),
        Err(Stop::Reply(e)) => {
            runner.fail(format!("waiting for a reply: {e}"));
            runner.say(&format!("Session aborted: waiting for a reply: {e}"))?;
        }
    }
    let state = runner.state.clone();
    sink.emit(SessionEvent::Finished {
        stage: state.stage,
        reconstructions: state.counter,
        cause: state.abort_cause.clone(),
    });
    Ok(SessionOutcome {
        log_text: runner.log.text(),
        log_path: path,
        events: runner.events,
        scripts: runner.out.scripts,
        mock_scores: runner.out.mock_scores,
        reports: runner.out.reports,
        fallbacks: runner.out.fallbacks,
        human_quality_rounds: runner.out.human_quality_rounds,
        state,
    })
}

/// The user's turns in a session log, for replaying a session.
pub fn user_turns(entries: &[LogEntry]) -> Vec<String> {
    entries
        .iter()
        .filter(|e| e.speaker == Some(Speaker::User))
        .map(|e| e.text.clone())
        .collect()
}

#[cfg(test)]
mod tests;
