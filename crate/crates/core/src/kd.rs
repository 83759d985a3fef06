//! Knowledge-distillation losses: temperature softmax, the logit-matching KD
//! loss, and the feature-map MMD loss (full and channel-subset forms).
//!
//! Batch reduction is a sum unless [`Reduction::Mean`] is requested.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Floor applied to probabilities inside `-log q[label]`.
pub const PROB_FLOOR: f64 = 1e-12;
/// Floor applied to feature-row norms before normalization.
pub const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KdError {
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("lambda must lie in [0, 1], got {0}")]
    InvalidLambda(f64),
    #[error("nst beta must be non-negative, got {0}")]
    InvalidBeta(f64),
    #[error("polynomial degree must be >= 1")]
    InvalidDegree,
    #[error("p has mass at index {0} where q is zero")]
    SupportMismatch(usize),
    #[error("dimension mismatch: {what} ({left} vs {right})")]
    DimensionMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("{map} feature map row {row} is entirely zero")]
    ZeroRow { map: &'static str, row: usize },
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("subset index {index} out of range for {len} channels")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("feature-map lists differ in length: {0} vs {1}")]
    ListLengthMismatch(usize, usize),
}

/// Pre-softmax activations, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits(pub DMatrix<f64>);

impl Logits {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, KdError> {
        Ok(Self(matrix_from_rows(rows, "logits")?))
    }

    pub fn batch(&self) -> usize {
        self.0.nrows()
    }

    pub fn classes(&self) -> usize {
        self.0.ncols()
    }

    fn row(&self, i: usize) -> Vec<f64> {
        self.0.row(i).iter().copied().collect()
    }
}

/// One activation row per channel, flattened over spatial positions.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap(pub DMatrix<f64>);

impl FeatureMap {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, KdError> {
        Ok(Self(matrix_from_rows(rows, "feature map")?))
    }

    pub fn channels(&self) -> usize {
        self.0.nrows()
    }

    pub fn positions(&self) -> usize {
        self.0.ncols()
    }
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &'static str) -> Result<DMatrix<f64>, KdError> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 {
        return Err(KdError::Empty(what));
    }
    if let Some(bad) = rows.iter().find(|row| row.len() != c) {
        return Err(KdError::DimensionMismatch {
            what: "ragged rows",
            left: c,
            right: bad.len(),
        });
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(KdError::NonFinite(what));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    #[default]
    Sum,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KdConfig {
    pub tau: f64,
    pub lambda: f64,
    pub nst_beta: f64,
    #[serde(default)]
    pub reduction: Reduction,
}

impl Default for KdConfig {
    fn default() -> Self {
        Self {
            tau: 1.0,
            lambda: 0.5,
            nst_beta: 12.5,
            reduction: Reduction::Sum,
        }
    }
}

impl KdConfig {
    pub fn validate(&self) -> Result<(), KdError> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(KdError::NonPositiveTemperature(self.tau));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(KdError::InvalidLambda(self.lambda));
        }
        if !(self.nst_beta >= 0.0) || !self.nst_beta.is_finite() {
            return Err(KdError::InvalidBeta(self.nst_beta));
        }
        Ok(())
    }

    fn reduce(&self, total: f64, count: usize) -> f64 {
        match self.reduction {
            Reduction::Sum => total,
            Reduction::Mean => total / count as f64,
        }
    }
}

/// Polynomial kernel `(x.y + c)^b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmdKernelSpec {
    pub c: f64,
    pub b: u32,
}

impl Default for MmdKernelSpec {
    fn default() -> Self {
        Self { c: 0.0, b: 2 }
    }
}

impl MmdKernelSpec {
    pub fn polynomial(c: f64, b: u32) -> Result<Self, KdError> {
        if b == 0 {
            return Err(KdError::InvalidDegree);
        }
        Ok(Self { c, b })
    }

    #[inline]
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
        (dot + self.c).powi(self.b as i32)
    }
}

/// `softmax(z / tau)` with max subtraction.
pub fn softmax_temp(z: &[f64], tau: f64) -> Result<Vec<f64>, KdError> {
    Ok(log_softmax_temp(z, tau)?.into_iter().map(f64::exp).collect())
}

fn log_softmax_temp(z: &[f64], tau: f64) -> Result<Vec<f64>, KdError> {
    if !(tau > 0.0) {
        return Err(KdError::NonPositiveTemperature(tau));
    }
    if z.is_empty() {
        return Err(KdError::Empty("logit vector"));
    }
    let scaled: Vec<f64> = z.iter().map(|v| v / tau).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = scaled.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    Ok(scaled.iter().map(|v| v - max - lse).collect())
}

/// `-sum_i p_i log q_i`; terms with `p_i = 0` contribute nothing.
pub fn cross_entropy(p: &[f64], q: &[f64]) -> Result<f64, KdError> {
    if p.len() != q.len() {
        return Err(KdError::DimensionMismatch {
            what: "cross-entropy operands",
            left: p.len(),
            right: q.len(),
        });
    }
    let mut h = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Err(KdError::SupportMismatch(i));
            }
            h -= pi * qi.ln();
        }
    }
    Ok(h)
}

/// `-log softmax(z)[label]`, probability floored at [`PROB_FLOOR`].
fn label_nll(z: &[f64], label: usize) -> Result<f64, KdError> {
    if label >= z.len() {
        return Err(KdError::LabelOutOfRange {
            label,
            classes: z.len(),
        });
    }
    let q = softmax_temp(z, 1.0)?;
    Ok(-q[label].max(PROB_FLOOR).ln())
}

fn summed_label_loss(student: &Logits, labels: &[usize]) -> Result<f64, KdError> {
    if labels.len() != student.batch() {
        return Err(KdError::DimensionMismatch {
            what: "labels vs batch",
            left: labels.len(),
            right: student.batch(),
        });
    }
    (0..student.batch()).map(|i| label_nll(&student.row(i), labels[i])).sum()
}

/// `(1 - lambda) * sum_i H(y_i, softmax(zs_i)) + lambda * tau^2 * sum_i H(softmax(zt_i / tau), softmax(zs_i / tau))`.
pub fn kd_loss(student: &Logits, teacher: &Logits, labels: &[usize], cfg: &KdConfig) -> Result<f64, KdError> {
    cfg.validate()?;
    if student.batch() != teacher.batch() || student.classes() != teacher.classes() {
        return Err(KdError::DimensionMismatch {
            what: "student vs teacher logits",
            left: student.batch() * student.classes(),
            right: teacher.batch() * teacher.classes(),
        });
    }
    let hard = summed_label_loss(student, labels)?;
    let mut soft = 0.0;
    for i in 0..student.batch() {
        let pt = softmax_temp(&teacher.row(i), cfg.tau)?;
        let log_qs = log_softmax_temp(&student.row(i), cfg.tau)?;
        soft -= pt.iter().zip(&log_qs).map(|(p, lq)| p * lq).sum::<f64>();
    }
    let total = (1.0 - cfg.lambda) * hard + cfg.lambda * cfg.tau * cfg.tau * soft;
    Ok(cfg.reduce(total, student.batch()))
}

fn normalized_rows(map: &FeatureMap, idx: &[usize], which: &'static str) -> Result<Vec<Vec<f64>>, KdError> {
    if map.0.iter().any(|v| !v.is_finite()) {
        return Err(KdError::NonFinite(which));
    }
    idx.iter()
        .map(|&i| {
            let row: Vec<f64> = map.0.row(i).iter().copied().collect();
            if row.iter().all(|&v| v == 0.0) {
                return Err(KdError::ZeroRow { map: which, row: i });
            }
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_FLOOR);
            Ok(row.into_iter().map(|v| v / norm).collect())
        })
        .collect()
}

fn check_subset(idx: &[usize], len: usize, what: &'static str) -> Result<(), KdError> {
    if idx.is_empty() {
        return Err(KdError::Empty(what));
    }
    match idx.iter().find(|&&i| i >= len) {
        Some(&index) => Err(KdError::IndexOutOfRange { index, len }),
        None => Ok(()),
    }
}

/// Squared MMD between the row-normalized channels of two feature maps.
pub fn mmd2(ft: &FeatureMap, fs: &FeatureMap, kernel: &MmdKernelSpec) -> Result<f64, KdError> {
    let all_t: Vec<usize> = (0..ft.channels()).collect();
    let all_s: Vec<usize> = (0..fs.channels()).collect();
    mmd2_subset(ft, fs, &all_t, &all_s, kernel)
}

/// Squared MMD restricted to the channel subsets `subset_t` and `subset_s`.
pub fn mmd2_subset(
    ft: &FeatureMap,
    fs: &FeatureMap,
    subset_t: &[usize],
    subset_s: &[usize],
    kernel: &MmdKernelSpec,
) -> Result<f64, KdError> {
    if kernel.b == 0 {
        return Err(KdError::InvalidDegree);
    }
    if ft.positions() != fs.positions() {
        return Err(KdError::DimensionMismatch {
            what: "feature-map positions",
            left: ft.positions(),
            right: fs.positions(),
        });
    }
    check_subset(subset_t, ft.channels(), "teacher subset")?;
    check_subset(subset_s, fs.channels(), "student subset")?;
    let t = normalized_rows(ft, subset_t, "teacher")?;
    let s = normalized_rows(fs, subset_s, "student")?;

    let double_sum = |a: &[Vec<f64>], b: &[Vec<f64>]| -> f64 {
        a.iter()
            .map(|x| b.iter().map(|y| kernel.eval(x, y)).sum::<f64>())
            .sum()
    };
    let nt = t.len() as f64;
    let ns = s.len() as f64;
    Ok(double_sum(&t, &t) / (nt * nt) + double_sum(&s, &s) / (ns * ns) - 2.0 * double_sum(&t, &s) / (nt * ns))
}

fn check_lists(ft_list: &[FeatureMap], fs_list: &[FeatureMap]) -> Result<(), KdError> {
    if ft_list.len() != fs_list.len() {
        return Err(KdError::ListLengthMismatch(ft_list.len(), fs_list.len()));
    }
    Ok(())
}

/// Label cross-entropy plus `nst_beta` times the MMD over each paired map.
///
/// With [`Reduction::Mean`] the label term is averaged over the batch and the
/// MMD term over the pairs.
pub fn nst_loss(
    student: &Logits,
    labels: &[usize],
    ft_list: &[FeatureMap],
    fs_list: &[FeatureMap],
    cfg: &KdConfig,
    kernel: &MmdKernelSpec,
) -> Result<f64, KdError> {
    check_lists(ft_list, fs_list)?;
    let mmd: f64 = ft_list
        .iter()
        .zip(fs_list)
        .map(|(t, s)| mmd2(t, s, kernel))
        .sum::<Result<f64, _>>()?;
    nst_combine(student, labels, mmd, ft_list.len(), cfg)
}

/// [`nst_loss`] with every MMD term restricted to the same channel subsets.
pub fn nst_loss_subset(
    student: &Logits,
    labels: &[usize],
    ft_list: &[FeatureMap],
    fs_list: &[FeatureMap],
    subset_t: &[usize],
    subset_s: &[usize],
    cfg: &KdConfig,
    kernel: &MmdKernelSpec,
) -> Result<f64, KdError> {
    check_lists(ft_list, fs_list)?;
    let mmd: f64 = ft_list
        .iter()
        .zip(fs_list)
        .map(|(t, s)| mmd2_subset(t, s, subset_t, subset_s, kernel))
        .sum::<Result<f64, _>>()?;
    nst_combine(student, labels, mmd, ft_list.len(), cfg)
}

fn nst_combine(student: &Logits, labels: &[usize], mmd: f64, pairs: usize, cfg: &KdConfig) -> Result<f64, KdError> {
    cfg.validate()?;
    let ce = summed_label_loss(student, labels)?;
    Ok(cfg.reduce(ce, student.batch()) + cfg.nst_beta * cfg.reduce(mmd, pairs.max(1)))
}

/// Text fixture: one JSON header line, then one whitespace-separated row per line.
pub mod fixture {
    use super::*;

    #[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
    pub struct FixtureHeader {
        pub rows: usize,
        pub cols: usize,
        pub role: String,
    }

    #[derive(Debug, Error)]
    pub enum FixtureError {
        #[error("missing header line")]
        MissingHeader,
        #[error("bad header: {0}")]
        Header(#[from] serde_json::Error),
        #[error("line {line}: {msg}")]
        Row { line: usize, msg: String },
        #[error("header declares {declared} rows but {found} were found")]
        RowCount { declared: usize, found: usize },
    }

    pub fn parse(text: &str) -> Result<(FixtureHeader, Vec<Vec<f64>>), FixtureError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, head) = lines.next().ok_or(FixtureError::MissingHeader)?;
        let header: FixtureHeader = serde_json::from_str(head)?;
        let mut rows = Vec::with_capacity(header.rows);
        for (n, line) in lines {
            let row = line
                .split_whitespace()
                .map(str::parse::<f64>)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| FixtureError::Row {
                    line: n + 1,
                    msg: e.to_string(),
                })?;
            if row.len() != header.cols {
                return Err(FixtureError::Row {
                    line: n + 1,
                    msg: format!("expected {} values, found {}", header.cols, row.len()),
                });
            }
            rows.push(row);
        }
        if rows.len() != header.rows {
            return Err(FixtureError::RowCount {
                declared: header.rows,
                found: rows.len(),
            });
        }
        Ok((header, rows))
    }

    pub fn render(role: &str, rows: &[Vec<f64>]) -> String {
        let header = FixtureHeader {
            rows: rows.len(),
            cols: rows.first().map_or(0, Vec::len),
            role: role.to_string(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for row in rows {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }
}
