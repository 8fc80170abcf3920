//! Script generation and execution.

pub mod external;
pub mod mock;
pub mod template;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::ReconstructionParams;
use crate::rulebook::QualityReport;
pub use mock::{mock_reconstruct, MockFlags, MockScenario};
pub use template::{render_script, TemplateError};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(2 * 60 * 60);

#[derive(Debug, Error)]
pub enum ExecutorError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("execution failed (status {status:?}): {tail}")]
    Failed { status: Option<i32>, tail: String },
    #[error("execution timed out after {secs} s")]
    Timeout { secs: f64 },
}

/// Lowercases, maps non-alphanumerics to `_`, and drops a `_` that sits
/// between a letter and a digit: `gpt-4o-mini` becomes `gpt4o_mini`.
pub fn sanitize_model_name(model: &str) -> String {
    let mapped: Vec<char> = model
        .to_lowercase()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    let mut out = String::with_capacity(mapped.len());
    for (i, &c) in mapped.iter().enumerate() {
        if c == '_' && i > 0 && i + 1 < mapped.len() && mapped[i - 1].is_ascii_alphabetic() && mapped[i + 1].is_ascii_digit() {
            continue;
        }
        out.push(c);
    }
    out
}

pub fn script_file_name(kb: &str, model: &str, level: u8, n: u32) -> String {
    format!("{kb}_{}_l{level}_ptycho_script_{n}.m", sanitize_model_name(model))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptArtifact {
    pub path: PathBuf,
    pub text: String,
    pub params: ReconstructionParams,
    pub n: u32,
}

/// Renders the template and writes the script into `dir`.
pub fn generate_script(
    params: &ReconstructionParams,
    template: &str,
    dir: &Path,
    file_name: &str,
    n: u32,
) -> Result<ScriptArtifact, ExecutorError> {
    let text = render_script(params, template)?;
    let path = dir.join(file_name);
    fs::write(&path, &text)?;
    Ok(ScriptArtifact {
        path,
        text,
        params: params.clone(),
        n,
    })
}

pub const DRIVER_NAME: &str = "driver.m";

const DRIVER_SOURCE: &str = "function driver(script_path)
% Runs one generated reconstruction script.
[script_dir, ~, ~] = fileparts(script_path);
addpath(script_dir);
run(script_path);
end
";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DriverFile {
    pub path: PathBuf,
    pub overwritten: bool,
}

pub fn write_driver(dir: &Path) -> io::Result<DriverFile> {
    let path = dir.join(DRIVER_NAME);
    let overwritten = path.exists();
    fs::write(&path, DRIVER_SOURCE)?;
    Ok(DriverFile { path, overwritten })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionResult {
    pub exit_status: i32,
    /// Captured output, at most the last 64 KiB.
    pub output: String,
    pub elapsed_secs: f64,
    /// Result image written by the mock engine.
    pub image_path: Option<PathBuf>,
    /// Where the external engine writes results, when known.
    pub result_dir: Option<PathBuf>,
    pub full_output_path: Option<PathBuf>,
    /// Ground truth from the mock engine.
    pub mock_report: Option<QualityReport>,
    pub mock_score: Option<f64>,
}

impl ExecutionResult {
    pub fn success(&self) -> bool {
        self.exit_status == 0 && !external::has_fatal_marker(&self.output)
    }
}

/// How scripts are executed.
#[derive(Debug, Clone, PartialEq)]
pub enum ExecMode {
    Mock(MockScenario),
    External { command: String, timeout: Duration },
}

impl ExecMode {
    /// Command line shown in the log for `script`.
    pub fn command_line(&self, script: &Path) -> String {
        match self {
            ExecMode::Mock(_) => format!("mock -batch \"{}\"", external::driver_call(script)),
            ExecMode::External { command, .. } => external::batch_command_line(command, script),
        }
    }

    pub fn command_name(&self) -> &str {
        match self {
            ExecMode::Mock(_) => "the built-in mock engine",
            ExecMode::External { command, .. } => command,
        }
    }
}

/// Executes a generated script.
pub fn execute(script: &ScriptArtifact, mode: &ExecMode, working_dir: &Path) -> Result<ExecutionResult, ExecutorError> {
    match mode {
        ExecMode::Mock(scenario) => {
            let run = mock_reconstruct(&script.params, scenario);
            let image_path = script.path.with_extension("png");
            fs::write(&image_path, &run.image_png)?;
            Ok(ExecutionResult {
                exit_status: 0,
                output: run.output,
                elapsed_secs: run.elapsed_secs,
                image_path: Some(image_path),
                result_dir: None,
                full_output_path: None,
                mock_report: Some(run.report),
                mock_score: Some(run.score),
            })
        }
        ExecMode::External { command, timeout } => {
            let side = script.path.with_extension("out.txt");
            let out = external::run_batch(command, &script.path, working_dir, *timeout, Some(&side))?;
            let result = ExecutionResult {
                exit_status: out.status,
                output: out.tail,
                elapsed_secs: out.elapsed_secs,
                image_path: None,
                result_dir: Some(PathBuf::from(&script.params.data_directory)),
                full_output_path: out.full_output_path,
                mock_report: None,
                mock_score: None,
            };
            if result.success() {
                Ok(result)
            } else {
                Err(ExecutorError::Failed {
                    status: Some(result.exit_status),
                    tail: result.output,
                })
            }
        }
    }
}
