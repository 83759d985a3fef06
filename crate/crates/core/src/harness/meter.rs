use serde::{Deserialize, Serialize};

use super::benchmark::{Benchmark, Column, Fidelity};
use super::HarnessError;
use crate::space::Architecture;

/// Simulated seconds spent against a fixed limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetMeter {
    spent: f64,
    pub limit: f64,
}

impl BudgetMeter {
    pub fn new(limit: f64) -> Self {
        Self { spent: 0.0, limit }
    }

    pub fn spent(&self) -> f64 {
        self.spent
    }

    pub fn exhausted(&self) -> bool {
        self.spent >= self.limit
    }

    pub fn remaining(&self) -> f64 {
        (self.limit - self.spent).max(0.0)
    }

    fn debit(&mut self, cost: f64) {
        debug_assert!(cost >= 0.0);
        self.spent += cost;
    }
}

/// One table lookup, stamped with the meter state right after it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub arch: Architecture,
    pub column: Column,
    /// Position in the run's fidelity ladder (0 = cheapest).
    pub level: usize,
    pub val_acc: f64,
    pub cost: f64,
    pub spent_after: f64,
    /// The meter was already at or past its limit when this ran.
    pub over_budget: bool,
}

impl EvalRecord {
    pub fn fidelity(&self) -> Fidelity {
        self.column.fidelity()
    }
}

/// Budget-metered access to a benchmark for a single run.
#[derive(Debug, Clone)]
pub struct Evaluator<'a> {
    bench: &'a Benchmark,
    meter: BudgetMeter,
    log: Vec<EvalRecord>,
}

impl<'a> Evaluator<'a> {
    pub fn new(bench: &'a Benchmark, meter: BudgetMeter) -> Self {
        Self {
            bench,
            meter,
            log: Vec::new(),
        }
    }

    pub fn bench(&self) -> &'a Benchmark {
        self.bench
    }

    pub fn meter(&self) -> &BudgetMeter {
        &self.meter
    }

    pub fn trajectory(&self) -> &[EvalRecord] {
        &self.log
    }

    pub fn into_trajectory(self) -> Vec<EvalRecord> {
        self.log
    }

    /// Looks up `arch` in `column` and debits its cost. Allowed past the
    /// limit; such records carry `over_budget`.
    pub fn evaluate(&mut self, arch: &Architecture, column: Column) -> Result<EvalRecord, HarnessError> {
        let idx = self
            .bench
            .spec
            .index_of(arch)
            .map_err(|_| HarnessError::UnknownArchitecture(arch.to_string()))?;
        self.evaluate_index(idx, column, 0)
    }

    pub fn evaluate_index(&mut self, index: usize, column: Column, level: usize) -> Result<EvalRecord, HarnessError> {
        self.bench.require_column(column)?;
        let row = self.bench.row_at(index);
        let val_acc = row.value(column).expect("column checked");
        let cost = row.cost(column);
        let over_budget = self.meter.exhausted();
        self.meter.debit(cost);
        let rec = EvalRecord {
            arch: self.bench.spec.arch_at(index),
            column,
            level,
            val_acc,
            cost,
            spent_after: self.meter.spent(),
            over_budget,
        };
        self.log.push(rec.clone());
        Ok(rec)
    }
}
