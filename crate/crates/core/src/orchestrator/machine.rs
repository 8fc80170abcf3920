//! The session state machine. `step` is pure; the runner performs the work
//! each stage calls for and feeds the result back in as an event.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::confirm::is_lgtm;
use crate::params::ReconstructionParams;
use crate::rulebook::{ExperimentFacts, QualityReport};

/// The reply that aborts a session at any prompt.
pub const ABORT_TOKEN: &str = "/abort";

/// Level-2 sessions stop after this many reconstructions.
pub const DEFAULT_MAX_ROUNDS: u32 = 5;

/// Edits accepted in one confirmation before the session gives up.
pub const MAX_EDITS: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage {
    Init,
    Ask,
    Collect,
    Recommend,
    Format,
    Confirm,
    Generate,
    Run,
    Quality,
    Summarize,
    Update,
    Continue,
    Done,
    Aborted,
}

impl Stage {
    pub fn is_terminal(self) -> bool {
        matches!(self, Stage::Done | Stage::Aborted)
    }

    /// Stages that wait for a human reply.
    pub fn takes_replies(self) -> bool {
        matches!(self, Stage::Ask | Stage::Collect | Stage::Confirm | Stage::Quality | Stage::Continue)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Event {
    Started,
    /// All questions were answered.
    Answered,
    Collected {
        params: ReconstructionParams,
        facts: ExperimentFacts,
    },
    Recommended {
        params: ReconstructionParams,
    },
    Formatted,
    /// A human reply at the current prompt.
    UserReply(String),
    /// An edit read from a reply during confirmation.
    Edited {
        params: ReconstructionParams,
    },
    /// Level 2 confirms without asking.
    AutoConfirmed,
    Generated {
        path: String,
    },
    RunFinished,
    QualityReported(QualityReport),
    Summarized,
    Updated {
        params: ReconstructionParams,
    },
    /// Level 2 decides whether to go on.
    AutoDecide,
    Failed(String),
}

impl Event {
    pub fn name(&self) -> &'static str {
        match self {
            Event::Started => "Started",
            Event::Answered => "Answered",
            Event::Collected { .. } => "Collected",
            Event::Recommended { .. } => "Recommended",
            Event::Formatted => "Formatted",
            Event::UserReply(_) => "UserReply",
            Event::Edited { .. } => "Edited",
            Event::AutoConfirmed => "AutoConfirmed",
            Event::Generated { .. } => "Generated",
            Event::RunFinished => "RunFinished",
            Event::QualityReported(_) => "QualityReported",
            Event::Summarized => "Summarized",
            Event::Updated { .. } => "Updated",
            Event::AutoDecide => "AutoDecide",
            Event::Failed(_) => "Failed",
        }
    }
}

/// What the runner should do next.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Action {
    AskQuestions,
    CollectParameters,
    RecommendInitial,
    FormatParameters,
    PromptConfirmation,
    InterpretEdit(String),
    GenerateScript,
    RunScript,
    CollectQuality,
    Summarize,
    RecommendUpdates,
    PromptContinue,
    DecideContinue,
    Finish,
    Abort(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("event {event} is not allowed in stage {stage:?}")]
pub struct IllegalEvent {
    pub stage: Stage,
    pub event: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub stage: Stage,
    pub level: u8,
    pub max_rounds: u32,
    /// Reconstructions started so far.
    pub counter: u32,
    pub params: Option<ReconstructionParams>,
    /// Parameters of each reconstruction, in order.
    pub history: Vec<ReconstructionParams>,
    pub facts: Option<ExperimentFacts>,
    pub last_report: Option<QualityReport>,
    /// Edits in the current confirmation.
    pub edits: u32,
    /// The event before the last `Generated` was a confirmation.
    pub confirmed: bool,
    pub abort_cause: Option<String>,
}

impl SessionState {
    pub fn new(level: u8, max_rounds: u32) -> Self {
        Self {
            stage: Stage::Init,
            level,
            max_rounds,
            counter: 0,
            params: None,
            history: Vec::new(),
            facts: None,
            last_report: None,
            edits: 0,
            confirmed: false,
            abort_cause: None,
        }
    }

    fn to(mut self, stage: Stage) -> Self {
        self.stage = stage;
        self
    }

    fn abort(mut self, cause: impl Into<String>) -> (Self, Vec<Action>) {
        let cause = cause.into();
        self.stage = Stage::Aborted;
        self.abort_cause = Some(cause.clone());
        (self, vec![Action::Abort(cause)])
    }

    /// What the runner should do in the current stage.
    pub fn pending(&self) -> Vec<Action> {
        match self.stage {
            Stage::Init => Vec::new(),
            Stage::Ask => vec![Action::AskQuestions],
            Stage::Collect => vec![Action::CollectParameters],
            Stage::Recommend => vec![Action::RecommendInitial],
            Stage::Format => vec![Action::FormatParameters],
            Stage::Confirm => vec![Action::PromptConfirmation],
            Stage::Generate => vec![Action::GenerateScript],
            Stage::Run => vec![Action::RunScript],
            Stage::Quality => vec![Action::CollectQuality],
            Stage::Summarize => vec![Action::Summarize],
            Stage::Update => vec![Action::RecommendUpdates],
            Stage::Continue if self.level == 2 => vec![Action::DecideContinue],
            Stage::Continue => vec![Action::PromptContinue],
            Stage::Done => vec![Action::Finish],
            Stage::Aborted => vec![Action::Abort(self.abort_cause.clone().unwrap_or_default())],
        }
    }
}

fn is_abort(reply: &str) -> bool {
    reply.trim().eq_ignore_ascii_case(ABORT_TOKEN)
}

/// One transition. Illegal events leave the state untouched.
pub fn step(state: &SessionState, event: &Event) -> Result<(SessionState, Vec<Action>), IllegalEvent> {
    use Stage::*;
    let s = state.clone();
    let illegal = || IllegalEvent {
        stage: state.stage,
        event: event.name().to_string(),
    };
    if state.stage.is_terminal() {
        return Err(illegal());
    }
    if let Event::Failed(cause) = event {
        return Ok(s.abort(cause.clone()));
    }
    if let Event::UserReply(r) = event {
        if !state.stage.takes_replies() {
            return Err(illegal());
        }
        if is_abort(r) {
            return Ok(s.abort("aborted by the user"));
        }
    }
    let next = match (state.stage, event) {
        (Init, Event::Started) => s.to(Ask),
        (Ask, Event::Answered) => s.to(Collect),
        // an answer to one question; Ask stays until all are in
        (Ask, Event::UserReply(_)) => s,
        // a repeated answer
        (Collect, Event::UserReply(_)) => s,
        (Collect, Event::Collected { params, facts }) => {
            let mut s = s;
            s.params = Some(params.clone());
            s.facts = Some(facts.clone());
            s.to(if state.level >= 1 { Recommend } else { Format })
        }
        (Recommend, Event::Recommended { params }) => {
            let mut s = s;
            s.params = Some(params.clone());
            s.to(Format)
        }
        (Format, Event::Formatted) => {
            let mut s = s;
            s.edits = 0;
            s.to(Confirm)
        }
        (Confirm, Event::UserReply(r)) if is_lgtm(r) => {
            let mut s = s;
            s.confirmed = true;
            s.to(Generate)
        }
        (Confirm, Event::UserReply(r)) => {
            if state.edits >= MAX_EDITS {
                return Ok(s.abort(format!("no agreement on the parameters after {MAX_EDITS} edits")));
            }
            let mut s = s;
            s.edits += 1;
            return Ok((s, vec![Action::InterpretEdit(r.clone())]));
        }
        (Confirm, Event::Edited { params }) => {
            let mut s = s;
            s.params = Some(params.clone());
            s
        }
        (Confirm, Event::AutoConfirmed) if state.level == 2 => {
            let mut s = s;
            s.confirmed = true;
            s.to(Generate)
        }
        (Generate, Event::Generated { .. }) if state.confirmed => {
            let mut s = s;
            s.counter += 1;
            s.confirmed = false;
            s.to(Run)
        }
        (Run, Event::RunFinished) => {
            let mut s = s;
            let p = s.params.clone().ok_or_else(illegal)?;
            s.history.push(p);
            s.to(Quality)
        }
        // answers to the quality questions
        (Quality, Event::UserReply(_)) => s,
        (Quality, Event::QualityReported(r)) => {
            let mut s = s;
            s.last_report = Some(r.clone());
            s.to(Summarize)
        }
        (Summarize, Event::Summarized) => s.to(if state.level >= 1 { Update } else { Continue }),
        (Update, Event::Updated { params }) => {
            let mut s = s;
            s.params = Some(params.clone());
            s.to(Continue)
        }
        (Continue, Event::UserReply(r)) if state.level < 2 => {
            if r.trim().eq_ignore_ascii_case("yes") {
                let mut s = s;
                s.edits = 0;
                s.to(Confirm)
            } else {
                s.to(Done)
            }
        }
        (Continue, Event::AutoDecide) if state.level == 2 => {
            let clean = state.last_report.as_ref().is_some_and(QualityReport::is_clean);
            if clean || state.counter >= state.max_rounds {
                s.to(Done)
            } else {
                let mut s = s;
                s.edits = 0;
                s.to(Confirm)
            }
        }
        _ => return Err(illegal()),
    };
    let actions = next.pending();
    Ok((next, actions))
}

/// Folds `events` over a fresh state.
pub fn fold(level: u8, max_rounds: u32, events: &[Event]) -> Result<SessionState, IllegalEvent> {
    let mut s = SessionState::new(level, max_rounds);
    for e in events {
        s = step(&s, e)?.0;
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(stage: Stage, level: u8) -> SessionState {
        let mut s = SessionState::new(level, DEFAULT_MAX_ROUNDS);
        s.stage = stage;
        s.params = Some(ReconstructionParams::default());
        s
    }

    #[test]
    fn examples() {
        let (s, a) = step(&at(Stage::Confirm, 1), &Event::UserReply("lgtm".into())).unwrap();
        assert_eq!(s.stage, Stage::Generate);
        assert_eq!(a, vec![Action::GenerateScript]);

        let (s, _) = step(&at(Stage::Continue, 1), &Event::UserReply("no".into())).unwrap();
        assert_eq!(s.stage, Stage::Done);

        let before = at(Stage::Run, 1);
        let err = step(&before, &Event::UserReply("hello".into())).unwrap_err();
        assert_eq!(err.stage, Stage::Run);
    }

    #[test]
    fn edits_stay_in_confirm() {
        let (s, a) = step(&at(Stage::Confirm, 1), &Event::UserReply("set the batch size to 256".into())).unwrap();
        assert_eq!(s.stage, Stage::Confirm);
        assert_eq!(a, vec![Action::InterpretEdit("set the batch size to 256".into())]);
        let mut s = at(Stage::Confirm, 1);
        s.edits = MAX_EDITS;
        let (s, _) = step(&s, &Event::UserReply("more".into())).unwrap();
        assert_eq!(s.stage, Stage::Aborted);
    }

    #[test]
    fn abort_token_anywhere_a_reply_is_taken() {
        for stage in [Stage::Ask, Stage::Confirm, Stage::Quality, Stage::Continue] {
            let (s, a) = step(&at(stage, 1), &Event::UserReply(" /ABORT ".into())).unwrap();
            assert_eq!(s.stage, Stage::Aborted);
            assert_eq!(a, vec![Action::Abort("aborted by the user".into())]);
        }
    }

    #[test]
    fn generation_needs_confirmation() {
        let s = at(Stage::Generate, 1);
        assert!(step(&s, &Event::Generated { path: "x".into() }).is_err());
        assert!(step(&at(Stage::Confirm, 1), &Event::AutoConfirmed).is_err());
    }

    #[test]
    fn continue_needs_literal_yes() {
        for (reply, stage) in [("yes", Stage::Confirm), ("YES", Stage::Confirm), ("sure", Stage::Done), ("yes please", Stage::Done)] {
            let (s, _) = step(&at(Stage::Continue, 1), &Event::UserReply(reply.into())).unwrap();
            assert_eq!(s.stage, stage, "{reply}");
        }
    }

    #[test]
    fn level_two_stops_on_clean_report_or_cap() {
        let mut s = at(Stage::Continue, 2);
        s.counter = 1;
        s.last_report = Some(QualityReport::clean());
        assert_eq!(step(&s, &Event::AutoDecide).unwrap().0.stage, Stage::Done);
        let mut dirty = QualityReport::clean();
        dirty.converged = false;
        s.last_report = Some(dirty);
        assert_eq!(step(&s, &Event::AutoDecide).unwrap().0.stage, Stage::Confirm);
        s.counter = DEFAULT_MAX_ROUNDS;
        assert_eq!(step(&s, &Event::AutoDecide).unwrap().0.stage, Stage::Done);
    }

    #[test]
    fn level_zero_skips_recommend_and_update() {
        let (s, _) = step(
            &at(Stage::Collect, 0),
            &Event::Collected {
                params: ReconstructionParams::default(),
                facts: ExperimentFacts {
                    total_patterns: 1,
                    beam_energy: 300.0,
                    initial_probe_accurate: true,
                    sample_drifted: false,
                    sample_thickness: 1.0,
                },
            },
        )
        .unwrap();
        assert_eq!(s.stage, Stage::Format);
        assert_eq!(step(&at(Stage::Summarize, 0), &Event::Summarized).unwrap().0.stage, Stage::Continue);
    }

    #[test]
    fn terminal_states_accept_nothing() {
        assert!(step(&at(Stage::Done, 1), &Event::Started).is_err());
        assert!(step(&at(Stage::Aborted, 1), &Event::Failed("x".into())).is_err());
    }
}
