use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::space::{encode, Architecture, SpaceSpec};

/// One table entry. Accuracies are fractions in `[0, 1]`, costs are seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    /// Validation accuracy after the short distillation run.
    pub val_acc_low: f64,
    /// Validation accuracy after the short run with the plain logistic loss.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_acc_low_logistic: Option<f64>,
    /// Validation accuracy after the longer logistic-loss run.
    pub val_acc_high: f64,
    /// Test accuracy after full training; used for reporting only.
    pub test_acc_final: f64,
    pub cost_low: f64,
    pub cost_high: f64,
}

/// Which table column an evaluation reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Column {
    Low,
    LowLogistic,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fidelity {
    Low,
    High,
}

impl Column {
    pub fn fidelity(self) -> Fidelity {
        match self {
            Column::Low | Column::LowLogistic => Fidelity::Low,
            Column::High => Fidelity::High,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Column::Low => "val_acc_low",
            Column::LowLogistic => "val_acc_low_logistic",
            Column::High => "val_acc_high",
        }
    }
}

impl std::fmt::Display for Fidelity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Fidelity::Low => "low",
            Fidelity::High => "high",
        })
    }
}

impl BenchRow {
    pub fn value(&self, column: Column) -> Option<f64> {
        match column {
            Column::Low => Some(self.val_acc_low),
            Column::LowLogistic => self.val_acc_low_logistic,
            Column::High => Some(self.val_acc_high),
        }
    }

    pub fn cost(&self, column: Column) -> f64 {
        match column.fidelity() {
            Fidelity::Low => self.cost_low,
            Fidelity::High => self.cost_high,
        }
    }

    fn scaled(mut self, factor: f64) -> Self {
        self.val_acc_low *= factor;
        self.val_acc_low_logistic = self.val_acc_low_logistic.map(|v| v * factor);
        self.val_acc_high *= factor;
        self.test_acc_final *= factor;
        self
    }

    fn validate(&self, arch: &Architecture) -> Result<(), HarnessError> {
        let fields = [
            ("val_acc_low", Some(self.val_acc_low)),
            ("val_acc_low_logistic", self.val_acc_low_logistic),
            ("val_acc_high", Some(self.val_acc_high)),
            ("test_acc_final", Some(self.test_acc_final)),
        ];
        for (field, value) in fields {
            if let Some(v) = value {
                if !(0.0..=1.0).contains(&v) {
                    return Err(HarnessError::AccuracyOutOfRange {
                        arch: arch.to_string(),
                        field,
                        value: v,
                    });
                }
            }
        }
        for (field, v) in [("cost_low", self.cost_low), ("cost_high", self.cost_high)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(HarnessError::InvalidCost {
                    arch: arch.to_string(),
                    field,
                    value: v,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    spec: SpaceSpec,
    name: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Line {
    arch: Architecture,
    #[serde(flatten)]
    row: BenchRow,
}

/// A complete tabular oracle: one row per architecture in the space, stored
/// in canonical (lexicographic) order.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub spec: SpaceSpec,
    pub name: String,
    rows: Vec<BenchRow>,
    encodings: Vec<Vec<f64>>,
    has_logistic: bool,
}

impl Benchmark {
    /// `rows[i]` belongs to `spec.arch_at(i)`.
    pub fn new(spec: SpaceSpec, name: impl Into<String>, rows: Vec<BenchRow>) -> Result<Self, HarnessError> {
        let size = spec.size().ok_or(HarnessError::SpaceTooLarge)?;
        if rows.len() != size {
            let missing = (rows.len()..size).map(|i| spec.arch_at(i).to_string()).collect();
            return Err(HarnessError::IncompleteTable { missing });
        }
        for (i, row) in rows.iter().enumerate() {
            row.validate(&spec.arch_at(i))?;
        }
        let encodings = (0..size)
            .map(|i| encode(&spec.arch_at(i), &spec).map(|e| e.values))
            .collect::<Result<Vec<_>, _>>()?;
        let has_logistic = rows.iter().all(|r| r.val_acc_low_logistic.is_some());
        Ok(Self {
            spec,
            name: name.into(),
            rows,
            encodings,
            has_logistic,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[BenchRow] {
        &self.rows
    }

    pub fn row_at(&self, index: usize) -> &BenchRow {
        &self.rows[index]
    }

    pub fn row(&self, arch: &Architecture) -> Result<&BenchRow, HarnessError> {
        let idx = self
            .spec
            .index_of(arch)
            .map_err(|_| HarnessError::UnknownArchitecture(arch.to_string()))?;
        Ok(&self.rows[idx])
    }

    pub fn encoding(&self, index: usize) -> &[f64] {
        &self.encodings[index]
    }

    pub fn has_column(&self, column: Column) -> bool {
        column != Column::LowLogistic || self.has_logistic
    }

    pub fn require_column(&self, column: Column) -> Result<(), HarnessError> {
        if self.has_column(column) {
            Ok(())
        } else {
            Err(HarnessError::MissingColumn(column.name()))
        }
    }

    /// Values of `column` in canonical order.
    pub fn column(&self, column: Column) -> Result<Vec<f64>, HarnessError> {
        self.require_column(column)?;
        Ok(self.rows.iter().map(|r| r.value(column).expect("column present")).collect())
    }

    /// Canonical index of the architecture with the highest high-fidelity
    /// validation accuracy (first on ties).
    pub fn val_argmax(&self) -> usize {
        let mut best = 0;
        for (i, r) in self.rows.iter().enumerate() {
            if r.val_acc_high > self.rows[best].val_acc_high {
                best = i;
            }
        }
        best
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), HarnessError> {
        let header = Header {
            spec: self.spec,
            name: self.name.clone(),
        };
        writeln!(out, "{}", serde_json::to_string(&header)?)?;
        for (i, row) in self.rows.iter().enumerate() {
            let line = Line {
                arch: self.spec.arch_at(i),
                row: row.clone(),
            };
            writeln!(out, "{}", serde_json::to_string(&line)?)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_jsonl(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

/// Loads a JSON Lines benchmark; with `percent` every accuracy is divided by 100.
pub fn load_benchmark(path: &Path, percent: bool) -> Result<Benchmark, HarnessError> {
    let f = std::fs::File::open(path)?;
    read_benchmark(std::io::BufReader::new(f), percent)
}

pub fn read_benchmark<R: BufRead>(reader: R, percent: bool) -> Result<Benchmark, HarnessError> {
    let mut lines = reader.lines().enumerate();
    let header: Header = loop {
        match lines.next() {
            None => return Err(HarnessError::Parse { line: 1, msg: "missing header".into() }),
            Some((n, l)) => {
                let l = l?;
                if l.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str(&l).map_err(|e| HarnessError::Parse {
                    line: n + 1,
                    msg: e.to_string(),
                })?;
            }
        }
    };
    let spec = SpaceSpec::new(header.spec.num_edges, header.spec.num_ops)?;
    let size = spec.size().ok_or(HarnessError::SpaceTooLarge)?;
    let mut slots: Vec<Option<BenchRow>> = vec![None; size];
    let mut seen: HashMap<usize, usize> = HashMap::new();
    let factor = if percent { 0.01 } else { 1.0 };
    for (n, l) in lines {
        let l = l?;
        if l.trim().is_empty() {
            continue;
        }
        let line: Line = serde_json::from_str(&l).map_err(|e| HarnessError::Parse {
            line: n + 1,
            msg: e.to_string(),
        })?;
        let idx = spec.index_of(&line.arch)?;
        if seen.insert(idx, n + 1).is_some() {
            return Err(HarnessError::DuplicateArchitecture(line.arch.to_string()));
        }
        let row = if percent { line.row.scaled(factor) } else { line.row };
        row.validate(&line.arch)?;
        slots[idx] = Some(row);
    }
    let missing: Vec<String> = slots
        .iter()
        .enumerate()
        .filter(|(_, s)| s.is_none())
        .map(|(i, _)| spec.arch_at(i).to_string())
        .collect();
    if !missing.is_empty() {
        return Err(HarnessError::IncompleteTable { missing });
    }
    let rows = slots.into_iter().map(|s| s.expect("checked complete")).collect();
    Benchmark::new(spec, header.name, rows)
}
