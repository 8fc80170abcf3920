//! Summary tables over trial outcomes.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;

use super::{Classification, EvalRun, Mode, TrialOutcome};

/// Counts for one (mode, model, fault rate) group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub mode: Mode,
    pub model: String,
    pub fault_rate: f64,
    pub trials: usize,
    pub success: usize,
    pub mistake: usize,
    pub error: usize,
}

impl ReportRow {
    pub fn rate(&self, c: Classification) -> f64 {
        let n = match c {
            Classification::Success => self.success,
            Classification::Mistake => self.mistake,
            Classification::Error => self.error,
        };
        n as f64 / self.trials as f64
    }

    pub fn success_rate(&self) -> f64 {
        self.rate(Classification::Success)
    }
}

/// One row per group, ordered by mode, model and fault rate whatever the
/// order of `outcomes`.
pub fn report_rows(outcomes: &[TrialOutcome]) -> Vec<ReportRow> {
    // fault rates are keyed by their bits; they come from a short config list
    let mut groups: BTreeMap<(Mode, String, u64), ReportRow> = BTreeMap::new();
    for o in outcomes {
        let row = groups
            .entry((o.mode, o.model.clone(), o.fault_rate.to_bits()))
            .or_insert_with(|| ReportRow {
                mode: o.mode,
                model: o.model.clone(),
                fault_rate: o.fault_rate,
                trials: 0,
                success: 0,
                mistake: 0,
                error: 0,
            });
        row.trials += 1;
        match o.classification {
            Classification::Success => row.success += 1,
            Classification::Mistake => row.mistake += 1,
            Classification::Error => row.error += 1,
        }
    }
    let mut rows: Vec<ReportRow> = groups.into_values().collect();
    rows.sort_by(|a, b| {
        (a.mode, &a.model)
            .cmp(&(b.mode, &b.model))
            .then(a.fault_rate.total_cmp(&b.fault_rate))
    });
    rows
}

const HEADER: [&str; 10] = [
    "mode",
    "model",
    "fault_rate",
    "trials",
    "success",
    "mistake",
    "error",
    "success_rate",
    "mistake_rate",
    "error_rate",
];

fn cells(r: &ReportRow) -> [String; 10] {
    [
        r.mode.as_str().to_string(),
        r.model.clone(),
        format!("{:.2}", r.fault_rate),
        r.trials.to_string(),
        r.success.to_string(),
        r.mistake.to_string(),
        r.error.to_string(),
        format!("{:.2}", r.rate(Classification::Success)),
        format!("{:.2}", r.rate(Classification::Mistake)),
        format!("{:.2}", r.rate(Classification::Error)),
    ]
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(HEADER).expect("in-memory write");
    for r in rows {
        w.write_record(cells(r)).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
}

/// Aligned text table; text columns left-aligned, numbers right-aligned.
pub fn report_text(rows: &[ReportRow]) -> String {
    let body: Vec<[String; 10]> = rows.iter().map(cells).collect();
    let mut widths: Vec<usize> = HEADER.iter().map(|h| h.len()).collect();
    for row in &body {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cols: Vec<&str>| -> String {
        let parts: Vec<String> = cols
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if i < 2 {
                    format!("{c:<w$}", w = widths[i])
                } else {
                    format!("{c:>w$}", w = widths[i])
                }
            })
            .collect();
        parts.join("  ").trim_end().to_string()
    };
    let mut out = line(HEADER.to_vec());
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for row in &body {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

/// Writes `eval_report.csv`, `eval_report.txt`, `trials.csv` and
/// `problems.json` into `dir`.
pub fn write_reports(dir: &Path, run: &EvalRun) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let rows = report_rows(&run.outcomes);
    fs::write(dir.join("eval_report.csv"), report_csv(&rows))?;
    fs::write(dir.join("eval_report.txt"), report_text(&rows))?;

    let mut w = csv::Writer::from_path(dir.join("trials.csv")).map_err(io::Error::other)?;
    w.write_record(["problem_id", "mode", "model", "fault_rate", "classification", "mismatched", "attempts", "cause"])
        .map_err(io::Error::other)?;
    for o in &run.outcomes {
        let mismatched: Vec<&str> = o.mismatched.iter().map(|f| f.name()).collect();
        w.write_record([
            o.problem_id.to_string(),
            o.mode.as_str().to_string(),
            o.model.clone(),
            format!("{:.2}", o.fault_rate),
            o.classification.as_str().to_string(),
            mismatched.join(" "),
            o.attempts.to_string(),
            o.cause.clone().unwrap_or_default(),
        ])
        .map_err(io::Error::other)?;
    }
    w.flush()?;

    let json = serde_json::to_string_pretty(&run.problems).map_err(io::Error::other)?;
    fs::write(dir.join("problems.json"), json + "\n")
}
