//! Argument parsing and subcommand dispatch.

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use pear_core::eval::{report_rows, report_text, run_eval, write_reports, EvalConfig, Mode};
use pear_core::orchestrator::DEFAULT_MAX_ROUNDS;
use pear_core::params::to_canonical_text;
use pear_core::session_log::replay;

use crate::serve::{serve, ServeConfig};
use crate::setup::{self, BUILTIN_LLM};
use crate::terminal;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "pear", version, about = "Tune ptychographic reconstruction parameters with a team of LLM agents")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run an interactive session in the terminal.
    Run(RunArgs),
    /// Score generated scripts on synthetic problems.
    Eval(EvalArgs),
    /// Summarize a session log.
    Replay {
        #[arg(long)]
        log: PathBuf,
    },
    /// Serve sessions over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Automation level: 0 manual, 1 assisted, 2 automatic quality assessment.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(0..=2))]
    pub level: u8,
    /// Model name, or `builtin` for the bundled rule-following model.
    #[arg(long, default_value = BUILTIN_LLM)]
    pub llm: String,
    /// Knowledge base directory, or `demo`.
    #[arg(long, default_value = "demo")]
    pub kb: String,
    /// Directory holding the diffraction data.
    #[arg(long, default_value = "./")]
    pub base_dir: String,
    /// Where scripts and the session log are written.
    #[arg(long, default_value = ".")]
    pub script_dir: PathBuf,
    #[arg(long, default_value = "User")]
    pub user: String,
    /// Computer name shown in the settings banner.
    #[arg(long)]
    pub host_label: Option<String>,
    /// Reconstruction command, run as `<cmd> -batch "driver('<script>')"`.
    #[arg(long, conflicts_with = "mock")]
    pub recon_cmd: Option<String>,
    #[arg(long, default_value = "")]
    pub external_script: String,
    /// Use the built-in mock reconstruction engine.
    #[arg(long)]
    pub mock: bool,
    /// Draws the mock scenario from this seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_MAX_ROUNDS, value_parser = clap::value_parser!(u32).range(1..))]
    pub max_rounds: u32,
    /// Seconds a reconstruction may run.
    #[arg(long, default_value_t = 3600)]
    pub recon_timeout: u64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// `single`, `multi` or `both`.
    #[arg(long, default_value = "both", value_parser = ["single", "multi", "both"])]
    pub mode: String,
    /// Fault rates, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub fault_rate: Vec<f64>,
    #[arg(long, default_value = "eval_out")]
    pub out: PathBuf,
    #[arg(long, default_value = "demo")]
    pub kb: String,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value = "demo")]
    pub kb: String,
    /// Model used when a session does not name one.
    #[arg(long, default_value = BUILTIN_LLM)]
    pub llm: String,
    /// Parent directory of per-session script directories.
    #[arg(long, default_value = "pear_sessions")]
    pub script_dir: PathBuf,
    #[arg(long)]
    pub recon_cmd: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 3600)]
    pub recon_timeout: u64,
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_FAILURE
        }
    }
}

fn dispatch(command: Command) -> anyhow::Result<i32> {
    match command {
        Command::Run(args) => terminal::run(&args),
        Command::Eval(args) => eval(&args),
        Command::Replay { log } => replay_log(&log),
        Command::Serve(args) => {
            let cfg = ServeConfig {
                kb: std::sync::Arc::new(setup::knowledge_base(&args.kb)?),
                default_model: args.llm.clone(),
                script_root: args.script_dir.clone(),
                exec: setup::exec_mode(
                    args.recon_cmd.is_none(),
                    args.recon_cmd.as_deref(),
                    args.seed,
                    Duration::from_secs(args.recon_timeout),
                ),
                ..ServeConfig::default()
            };
            let addr = format!("{}:{}", args.host, args.port);
            tokio::runtime::Runtime::new()?.block_on(serve(&addr, cfg))?;
            Ok(EXIT_OK)
        }
    }
}

fn eval(args: &EvalArgs) -> anyhow::Result<i32> {
    let kb = setup::knowledge_base(&args.kb)?;
    let mut cfg = EvalConfig::new(args.n, args.seed);
    cfg.fault_rates = args.fault_rate.clone();
    if let Some(r) = cfg.fault_rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        eprintln!("error: fault rate {r} is outside [0, 1]");
        return Ok(EXIT_USAGE);
    }
    if args.mode != "both" {
        cfg.modes = vec![Mode::from_name(&args.mode).expect("clap checked the mode")];
    }
    let run = run_eval(&cfg, &kb)?;
    write_reports(&args.out, &run)?;
    print!("{}", report_text(&report_rows(&run.outcomes)));
    println!("reports written to {}", args.out.display());
    Ok(EXIT_OK)
}

fn replay_log(path: &std::path::Path) -> anyhow::Result<i32> {
    let text = std::fs::read_to_string(path)?;
    let r = replay(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    println!("entries: {}", r.entries.len());
    println!("user replies: {}", r.replies.len());
    println!("agents: {}", r.agents.join(", "));
    println!("reconstructions: {}", r.reconstruction_params.len());
    for (i, p) in r.reconstruction_params.iter().enumerate() {
        println!("\n# reconstruction {}\n{}", i + 1, to_canonical_text(p).trim_end());
    }
    Ok(EXIT_OK)
}
