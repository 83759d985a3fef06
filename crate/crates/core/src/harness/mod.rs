//! Tabular benchmarks, budget-metered evaluation, rank correlation, baseline
//! searchers and the multi-run comparison driver.

pub mod baselines;
pub mod benchmark;
pub mod compare;
pub mod kendall;
pub mod meter;
pub mod synth;

use thiserror::Error;

use crate::space::SpaceError;

pub use baselines::{run_gpr_single_fidelity, run_mf_no_kd, run_random_search};
pub use benchmark::{load_benchmark, read_benchmark, BenchRow, Benchmark, Column, Fidelity};
pub use compare::{compare_methods, Method, MethodSummary, Report, WelchTest};
pub use kendall::{correlate_column, correlate_fidelities, kendall_tau};
pub use meter::{BudgetMeter, EvalRecord, Evaluator};
pub use synth::{generate_synthetic, generate_synthetic_seeded, SynthConfig};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("search space too large to tabulate")]
    SpaceTooLarge,
    #[error("incomplete table: missing {} architecture(s), first: {}", missing.len(), missing.first().map(String::as_str).unwrap_or("-"))]
    IncompleteTable { missing: Vec<String> },
    #[error("{field} = {value} for {arch} is outside [0, 1]")]
    AccuracyOutOfRange { arch: String, field: &'static str, value: f64 },
    #[error("{field} = {value} for {arch} is not a valid cost")]
    InvalidCost { arch: String, field: &'static str, value: f64 },
    #[error("duplicate architecture {0}")]
    DuplicateArchitecture(String),
    #[error("unknown architecture {0}")]
    UnknownArchitecture(String),
    #[error("benchmark has no {0} column")]
    MissingColumn(&'static str),
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 observations, got {0}")]
    TooShort(usize),
    #[error("non-finite value")]
    NonFinite,
    #[error("rank correlation undefined: a vector is constant")]
    AllTies,
    #[error("target tau must lie in (0, 1), got {0}")]
    InvalidTau(f64),
    #[error("invalid synthetic config: {0}")]
    InvalidSynth(String),
    #[error("calibration failed: target tau {target}, best achieved {achieved}")]
    CalibrationFailure { target: f64, achieved: f64 },
    #[error("runs must be at least 1")]
    NoRuns,
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Search(#[from] crate::search::SearchError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
