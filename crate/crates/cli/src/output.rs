use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use chrono::{DateTime, SecondsFormat, Utc};
use mfkd::harness::compare::CurvePoint;
use mfkd::search::SearchResult;
use serde::Serialize;

/// Provenance written next to every set of outputs. Timestamps live only here.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub benchmark_name: Option<String>,
    pub tool_version: &'static str,
    pub started_at: String,
    pub finished_at: String,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seed: Option<u64>, benchmark_name: Option<String>, started: DateTime<Utc>) -> Self {
        Self {
            command: command.to_string(),
            args: std::env::args().skip(1).collect(),
            config,
            seed,
            benchmark_name,
            tool_version: env!("CARGO_PKG_VERSION"),
            started_at: started.to_rfc3339_opts(SecondsFormat::Millis, true),
            finished_at: Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn write_trajectories(path: &Path, runs: &[SearchResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["run", "step", "arch", "fidelity", "column", "level", "val_acc", "cost", "spent_after", "over_budget"])?;
    for (k, r) in runs.iter().enumerate() {
        for (step, rec) in r.trajectory.iter().enumerate() {
            w.write_record([
                k.to_string(),
                step.to_string(),
                rec.arch.to_string(),
                rec.fidelity().to_string(),
                rec.column.name().to_string(),
                rec.level.to_string(),
                rec.val_acc.to_string(),
                rec.cost.to_string(),
                rec.spent_after.to_string(),
                rec.over_budget.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_curves(path: &Path, curves: &[CurvePoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["method", "run", "spent_seconds", "best_test_acc"])?;
    for c in curves {
        w.write_record([
            c.method.name().to_string(),
            c.run.to_string(),
            c.spent_seconds.to_string(),
            c.best_test_acc.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
