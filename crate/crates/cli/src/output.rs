//! CSV and JSON artifacts. Every CSV starts with a `#` comment line naming
//! its schema and version, followed by the column header.

use std::fmt::Write;
use std::path::Path;

use forge_cl::experiments::{CampaignSummary, EvalMatrix};

use crate::error::{CliError, Result};
use crate::plot::{accuracy_panel, Series};

pub const SCHEMA_VERSION: u32 = 1;

fn header(schema: &str, columns: &str) -> String {
    format!("# forge-cl {schema} schema v{SCHEMA_VERSION}\n{columns}\n")
}

pub fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

pub fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

/// `phase,task,accuracy`: one row per phase and task; phases count from 0.
pub fn eval_matrix_csv(m: &EvalMatrix) -> String {
    let mut out = header("eval-matrix", "phase,task,accuracy");
    for (phase, row) in m.acc.iter().enumerate() {
        for (task, acc) in m.task_ids.iter().zip(row) {
            let _ = writeln!(out, "{phase},{task},{acc}");
        }
    }
    out
}

/// `phase,step,task,accuracy` at the evaluation cadence.
pub fn curve_csv(m: &EvalMatrix) -> String {
    let mut out = header("eval-curve", "phase,step,task,accuracy");
    for point in &m.curve {
        for (task, acc) in m.task_ids.iter().zip(&point.accuracies) {
            let _ = writeln!(out, "{},{},{task},{acc}", point.phase, point.step);
        }
    }
    out
}

/// `strategy,best,mean,worst`: final accuracy over task positions.
pub fn summary_csv(s: &CampaignSummary) -> String {
    let mut out = header("final-accuracy", "strategy,best,mean,worst");
    for st in &s.strategies {
        let _ = writeln!(out, "{},{},{},{}", st.kind.label(), st.best, st.mean, st.worst);
    }
    out
}

/// `strategy,phase,mean_accuracy`.
pub fn mean_curves_csv(s: &CampaignSummary) -> String {
    let mut out = header("mean-curve", "strategy,phase,mean_accuracy");
    for st in &s.strategies {
        for (phase, acc) in st.mean_curve.iter().enumerate() {
            let _ = writeln!(out, "{},{phase},{acc}", st.kind.label());
        }
    }
    out
}

/// `strategy,position,phase,accuracy`, averaged over sequences.
pub fn task_curves_csv(s: &CampaignSummary) -> String {
    let mut out = header("task-curve", "strategy,position,phase,accuracy");
    for st in &s.strategies {
        for (position, curve) in st.task_curves.iter().enumerate() {
            for (phase, acc) in curve.iter().enumerate() {
                let _ = writeln!(out, "{},{position},{phase},{acc}", st.kind.label());
            }
        }
    }
    out
}

/// `strategy,position,forgetting`.
pub fn forgetting_csv(s: &CampaignSummary) -> String {
    let mut out = header("forgetting", "strategy,position,forgetting");
    for st in &s.strategies {
        for (position, f) in st.forgetting.iter().enumerate() {
            let _ = writeln!(out, "{},{position},{f}", st.kind.label());
        }
    }
    out
}

/// One panel per strategy with its per-position curves, plus the comparison
/// of mean curves. Returns `(file name, svg)` pairs.
pub fn panels(s: &CampaignSummary) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = s
        .strategies
        .iter()
        .map(|st| {
            let series: Vec<Series> = st
                .task_curves
                .iter()
                .enumerate()
                .map(|(p, c)| Series {
                    name: format!("task {}", p + 1),
                    values: c.clone(),
                })
                .collect();
            (
                format!("panel_{}.svg", st.kind.as_str()),
                accuracy_panel(&format!("{} (mean of {} sequences)", st.kind.label(), st.sequences), &series),
            )
        })
        .collect();
    let means: Vec<Series> = s
        .strategies
        .iter()
        .map(|st| Series {
            name: st.kind.label().to_string(),
            values: st.mean_curve.clone(),
        })
        .collect();
    out.push(("panel_mean.svg".into(), accuracy_panel("Mean accuracy over tasks", &means)));
    out
}

/// Writes every summary artifact of a campaign into `dir`.
pub fn write_summary(dir: &Path, s: &CampaignSummary) -> Result<()> {
    write_file(&dir.join("summary.csv"), summary_csv(s).as_bytes())?;
    write_file(&dir.join("mean_curves.csv"), mean_curves_csv(s).as_bytes())?;
    write_file(&dir.join("task_curves.csv"), task_curves_csv(s).as_bytes())?;
    write_file(&dir.join("forgetting.csv"), forgetting_csv(s).as_bytes())?;
    for (name, svg) in panels(s) {
        write_file(&dir.join("plots").join(name), svg.as_bytes())?;
    }
    Ok(())
}

/// Aligned text table of the final accuracies.
pub fn summary_table(s: &CampaignSummary) -> String {
    let mut out = format!("{:<10} {:>6} {:>6} {:>6}   (after {} tasks)\n", "strategy", "best", "mean", "worst", s.seq_len);
    for st in &s.strategies {
        let _ = writeln!(out, "{:<10} {:>6.3} {:>6.3} {:>6.3}", st.kind.label(), st.best, st.mean, st.worst);
    }
    out
}
