//! Running an external reconstruction command.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use super::ExecutorError;

/// Output kept in memory; the full output goes to a side file.
pub const TAIL_BYTES: usize = 64 * 1024;

/// Markers that make a zero exit status count as a failure.
pub const FATAL_MARKERS: [&str; 3] = ["Error using ", "Error in ", "FATAL:"];

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessOutput {
    pub status: i32,
    /// Last [`TAIL_BYTES`] of merged stdout and stderr.
    pub tail: String,
    pub truncated: bool,
    pub elapsed_secs: f64,
    pub full_output_path: Option<PathBuf>,
}

pub fn has_fatal_marker(output: &str) -> bool {
    FATAL_MARKERS.iter().any(|m| output.contains(m))
}

/// The command line as logged: `<command> -batch "driver('<script>')"`.
pub fn batch_command_line(command: &str, script: &Path) -> String {
    format!("{command} -batch \"{}\"", driver_call(script))
}

pub fn driver_call(script: &Path) -> String {
    format!("driver('{}')", script.display())
}

fn keep_tail(buf: &mut Vec<u8>, truncated: &mut bool) {
    if buf.len() > TAIL_BYTES {
        let cut = buf.len() - TAIL_BYTES;
        buf.drain(..cut);
        *truncated = true;
    }
}

/// Runs `command -batch "driver('<script>')"` in its own process group.
///
/// stdout and stderr are merged line by line in arrival order. On timeout
/// the whole process group is killed.
pub fn run_batch(
    command: &str,
    script: &Path,
    working_dir: &Path,
    timeout: Duration,
    full_output_path: Option<&Path>,
) -> Result<ProcessOutput, ExecutorError> {
    let started = Instant::now();
    let mut child = Command::new(command)
        .arg("-batch")
        .arg(driver_call(script))
        .current_dir(working_dir)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0)
        .spawn()
        .map_err(|e| ExecutorError::Failed {
            status: None,
            tail: format!("cannot start `{command}`: {e}"),
        })?;

    let (tx, rx) = mpsc::channel::<Vec<u8>>();
    let mut readers = Vec::new();
    let stdout = child.stdout.take().map(|s| Box::new(s) as Box<dyn Read + Send>);
    let stderr = child.stderr.take().map(|s| Box::new(s) as Box<dyn Read + Send>);
    for stream in [stdout, stderr].into_iter().flatten() {
        let tx = tx.clone();
        readers.push(thread::spawn(move || {
            let mut reader = BufReader::new(stream);
            loop {
                let mut line = Vec::new();
                match reader.read_until(b'\n', &mut line) {
                    Ok(0) | Err(_) => break,
                    Ok(_) => {
                        if tx.send(line).is_err() {
                            break;
                        }
                    }
                }
            }
        }));
    }
    drop(tx);

    let mut side = match full_output_path {
        Some(p) => Some(File::create(p).map_err(ExecutorError::Io)?),
        None => None,
    };
    let mut tail = Vec::new();
    let mut truncated = false;
    let deadline = started + timeout;
    let mut timed_out = false;
    loop {
        let now = Instant::now();
        if now >= deadline {
            timed_out = true;
            break;
        }
        match rx.recv_timeout((deadline - now).min(Duration::from_millis(200))) {
            Ok(chunk) => {
                if let Some(f) = side.as_mut() {
                    f.write_all(&chunk).map_err(ExecutorError::Io)?;
                }
                tail.extend_from_slice(&chunk);
                keep_tail(&mut tail, &mut truncated);
            }
            Err(mpsc::RecvTimeoutError::Timeout) => {}
            Err(mpsc::RecvTimeoutError::Disconnected) => break,
        }
    }

    if timed_out {
        let pgid = child.id() as libc::pid_t;
        // SAFETY: kill(2) has no memory-safety preconditions; a negative pid
        // addresses the process group created above.
        unsafe {
            libc::kill(-pgid, libc::SIGKILL);
        }
        let _ = child.wait();
        for r in readers {
            let _ = r.join();
        }
        return Err(ExecutorError::Timeout {
            secs: timeout.as_secs_f64(),
        });
    }

    let status = child.wait().map_err(ExecutorError::Io)?;
    for r in readers {
        let _ = r.join();
    }
    if let Some(f) = side.as_mut() {
        f.flush().map_err(ExecutorError::Io)?;
    }
    let code = status.code().unwrap_or(-1);
    Ok(ProcessOutput {
        status: code,
        tail: String::from_utf8_lossy(&tail).into_owned(),
        truncated,
        elapsed_secs: started.elapsed().as_secs_f64(),
        full_output_path: full_output_path.map(Path::to_path_buf),
    })
}
