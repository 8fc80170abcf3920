//! The interactive terminal session: log lines go to stdout, replies come
//! from stdin, one line each.

use std::io::{self, BufRead, Write};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use pear_core::orchestrator::{
    run_session, ReplyError, ReplySource, SessionDeps, SessionEvent, SessionOutcome, SessionSettings, Stage,
};
use pear_core::session_log::{Redactor, SystemClock};

use crate::cli::{RunArgs, EXIT_FAILURE, EXIT_OK, EXIT_USAGE};
use crate::setup;

struct LineReplies<R> {
    input: R,
}

impl<R: BufRead> ReplySource for LineReplies<R> {
    fn next_reply(&mut self, _prompt: &str) -> Result<String, ReplyError> {
        let mut line = String::new();
        match self.input.read_line(&mut line) {
            Ok(0) | Err(_) => Err(ReplyError::Closed),
            Ok(_) => Ok(line.trim_end_matches(['\r', '\n']).to_string()),
        }
    }
}

/// Settings for a terminal session.
pub fn settings(args: &RunArgs) -> SessionSettings {
    let mut s = SessionSettings::new(args.level, &args.llm, &args.base_dir, &args.script_dir);
    s.user_name = args.user.clone();
    s.computer_name = args.host_label.clone().unwrap_or_else(setup::host_name);
    s.exec = setup::exec_mode(
        args.mock,
        args.recon_cmd.as_deref(),
        args.seed,
        Duration::from_secs(args.recon_timeout),
    );
    s.external_script = args.external_script.clone();
    s.max_rounds = args.max_rounds;
    s
}

/// Runs a session reading replies from `input` and echoing the log to
/// `output`. User replies are not echoed; the terminal already shows them.
pub fn run_with<R: BufRead, W: Write + Send>(
    args: &RunArgs,
    input: R,
    output: W,
) -> anyhow::Result<SessionOutcome> {
    std::fs::create_dir_all(&args.script_dir)?;
    let kb = setup::knowledge_base(&args.kb)?;
    let gateway = setup::gateway(&args.llm)?;
    let settings = settings(args);
    let deps = SessionDeps {
        gateway: &gateway,
        kb: &kb,
        clock: Arc::new(SystemClock),
        redactor: Redactor::default(),
        cancel: Default::default(),
    };
    let output = Mutex::new(output);
    let sink = |e: SessionEvent| {
        let mut out = output.lock().expect("output lock");
        let _ = match e {
            SessionEvent::Message { entry } if entry.speaker != Some(pear_core::agents::Speaker::User) => {
                write!(out, "{}", entry.render())
            }
            SessionEvent::AwaitingReply { .. } => write!(out, "> "),
            _ => Ok(()),
        };
        let _ = out.flush();
    };
    Ok(run_session(&settings, deps, &mut LineReplies { input }, &sink)?)
}

pub fn run(args: &RunArgs) -> anyhow::Result<i32> {
    if !args.mock && args.recon_cmd.is_none() {
        eprintln!("error: pass --mock or --recon-cmd <command>");
        return Ok(EXIT_USAGE);
    }
    let out = run_with(args, io::stdin().lock(), io::stdout())?;
    eprintln!("session log: {}", out.log_path.display());
    Ok(if out.state.stage == Stage::Done { EXIT_OK } else { EXIT_FAILURE })
}
