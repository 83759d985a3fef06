//! Exact Gaussian-process regression with an RBF kernel.
//!
//! Targets are centered on their mean before fitting and the mean is added
//! back at prediction time, so the prior is a zero-mean GP around the sample
//! mean. Hyperparameters are chosen by exhaustive search over a finite grid
//! of kernel configurations, maximizing the log marginal likelihood.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GpError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("invalid kernel configuration: {0}")]
    InvalidKernel(String),
    #[error("duplicate training inputs (rows {0} and {1}) with zero noise variance")]
    DuplicateInputsWithZeroNoise(usize, usize),
    #[error("cholesky factorization failed after jitter escalation to {0:e}")]
    CholeskyFailure(f64),
    #[error("every configuration in the hyperparameter grid failed to fit")]
    AllFitsFailed,
    #[error("hyperparameter grid is empty")]
    EmptyGrid,
    #[error("non-finite training target at row {0}")]
    NonFiniteTarget(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Rbf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub kind: KernelKind,
    pub lengthscale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl KernelConfig {
    pub fn rbf(lengthscale: f64, signal_variance: f64, noise_variance: f64) -> Result<Self, GpError> {
        let cfg = Self {
            kind: KernelKind::Rbf,
            lengthscale,
            signal_variance,
            noise_variance,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), GpError> {
        // lengthscale may be +inf (constant kernel limit)
        if !(self.lengthscale > 0.0) {
            return Err(GpError::InvalidKernel(format!(
                "lengthscale must be > 0, got {}",
                self.lengthscale
            )));
        }
        if !(self.signal_variance > 0.0) || !self.signal_variance.is_finite() {
            return Err(GpError::InvalidKernel(format!(
                "signal_variance must be > 0, got {}",
                self.signal_variance
            )));
        }
        if !(self.noise_variance >= 0.0) || !self.noise_variance.is_finite() {
            return Err(GpError::InvalidKernel(format!(
                "noise_variance must be >= 0, got {}",
                self.noise_variance
            )));
        }
        Ok(())
    }

    #[inline]
    fn from_sq_dist(&self, sq: f64) -> f64 {
        match self.kind {
            KernelKind::Rbf => {
                self.signal_variance * (-sq / (2.0 * self.lengthscale * self.lengthscale)).exp()
            }
        }
    }
}

/// `signal_variance * exp(-|x - x2|^2 / (2 lengthscale^2))`.
pub fn kernel_eval(cfg: &KernelConfig, x: &[f64], x2: &[f64]) -> Result<f64, GpError> {
    if x.len() != x2.len() {
        return Err(GpError::DimensionMismatch {
            expected: x.len(),
            got: x2.len(),
        });
    }
    Ok(cfg.from_sq_dist(sq_dist(x, x2)))
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// An ordered list of kernel configurations to search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    pub configs: Vec<KernelConfig>,
}

impl HyperGrid {
    pub fn single(cfg: KernelConfig) -> Self {
        Self { configs: vec![cfg] }
    }

    /// Cartesian product; lengthscale varies slowest, noise fastest.
    pub fn product(
        lengthscales: &[f64],
        signal_variances: &[f64],
        noise_variances: &[f64],
    ) -> Result<Self, GpError> {
        let mut configs = Vec::new();
        for &ls in lengthscales {
            for &sv in signal_variances {
                for &nv in noise_variances {
                    configs.push(KernelConfig::rbf(ls, sv, nv)?);
                }
            }
        }
        Ok(Self { configs })
    }

    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }
}

impl Default for HyperGrid {
    fn default() -> Self {
        Self::product(
            &[0.5, 1.0, 2.0, 4.0, 8.0],
            &[0.01, 0.1, 1.0],
            &[1e-6, 1e-4, 1e-2],
        )
        .expect("default grid is valid")
    }
}

/// Training inputs as rows, with their pairwise squared distances cached.
#[derive(Debug, Clone)]
pub struct Design {
    rows: Vec<Vec<f64>>,
    sq: DMatrix<f64>,
}

impl Design {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self, GpError> {
        if rows.is_empty() {
            return Err(GpError::EmptyTrainingSet);
        }
        let d = rows[0].len();
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(GpError::DimensionMismatch {
                expected: d,
                got: bad.len(),
            });
        }
        let n = rows.len();
        let mut sq = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..i {
                let v = sq_dist(&rows[i], &rows[j]);
                sq[(i, j)] = v;
                sq[(j, i)] = v;
            }
        }
        Ok(Self { rows, sq })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows[0].len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    fn first_duplicate(&self) -> Option<(usize, usize)> {
        let n = self.len();
        for i in 0..n {
            for j in 0..i {
                if self.sq[(i, j)] == 0.0 && self.rows[i] == self.rows[j] {
                    return Some((j, i));
                }
            }
        }
        None
    }

    fn gram(&self, cfg: &KernelConfig) -> DMatrix<f64> {
        let n = self.len();
        DMatrix::from_fn(n, n, |i, j| cfg.from_sq_dist(self.sq[(i, j)]))
    }
}

/// Lower Cholesky factor; `None` if the matrix is not numerically PD.
pub(crate) fn cholesky_lower(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut diag = a[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return None;
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Some(l)
}

fn forward_solve(l: &DMatrix<f64>, b: &[f64]) -> Vec<f64> {
    let n = l.nrows();
    let mut x = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

fn backward_solve_transposed(l: &DMatrix<f64>, b: &[f64]) -> Vec<f64> {
    let n = l.nrows();
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Lower Cholesky factor of `K + noise I (+ jitter I)` for one configuration.
#[derive(Debug, Clone)]
pub struct Factor {
    pub cfg: KernelConfig,
    l: DMatrix<f64>,
    /// Extra diagonal added beyond `noise_variance`.
    pub jitter: f64,
    half_log_det: f64,
}

impl Factor {
    pub fn new(design: &Design, cfg: &KernelConfig) -> Result<Self, GpError> {
        cfg.validate()?;
        if cfg.noise_variance == 0.0 {
            if let Some((a, b)) = design.first_duplicate() {
                return Err(GpError::DuplicateInputsWithZeroNoise(a, b));
            }
        }
        let mut k = design.gram(cfg);
        for i in 0..k.nrows() {
            k[(i, i)] += cfg.noise_variance;
        }
        let mut jitter = 0.0;
        let mut next = JITTER_START * cfg.signal_variance;
        let l = loop {
            if let Some(l) = cholesky_lower(&k) {
                break l;
            }
            if next > JITTER_MAX * cfg.signal_variance * (1.0 + 1e-9) {
                return Err(GpError::CholeskyFailure(jitter));
            }
            for i in 0..k.nrows() {
                k[(i, i)] += next - jitter;
            }
            jitter = next;
            next *= 10.0;
        };
        let half_log_det = (0..l.nrows()).map(|i| l[(i, i)].ln()).sum();
        Ok(Self {
            cfg: *cfg,
            l,
            jitter,
            half_log_det,
        })
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.l
    }

    fn solve(&self, y: &[f64]) -> Vec<f64> {
        backward_solve_transposed(&self.l, &forward_solve(&self.l, y))
    }

    /// Log marginal likelihood of already-centered targets.
    pub fn log_marginal_likelihood(&self, centered: &[f64]) -> f64 {
        let alpha = self.solve(centered);
        let quad: f64 = centered.iter().zip(&alpha).map(|(y, a)| y * a).sum();
        lml_from_parts(quad, self.half_log_det, centered.len())
    }
}

fn lml_from_parts(quad: f64, half_log_det: f64, n: usize) -> f64 {
    -0.5 * quad - half_log_det - 0.5 * n as f64 * (2.0 * PI).ln()
}

/// Centers `y`, returning `(centered, mean)`.
pub fn center(y: &[f64]) -> (Vec<f64>, f64) {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    (y.iter().map(|v| v - mean).collect(), mean)
}

/// A fitted GP regressor.
#[derive(Debug, Clone)]
pub struct GpModel {
    design: Design,
    /// Centered training targets.
    pub train_y: DVector<f64>,
    pub y_mean: f64,
    pub kernel: KernelConfig,
    factor: Factor,
    pub alpha: DVector<f64>,
}

impl GpModel {
    pub fn train_x(&self) -> &[Vec<f64>] {
        self.design.rows()
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    /// Lower-triangular factor of `K + noise_variance I` (plus any jitter).
    pub fn chol(&self) -> &DMatrix<f64> {
        self.factor.lower()
    }

    pub fn jitter(&self) -> f64 {
        self.factor.jitter
    }

    pub fn dim(&self) -> usize {
        self.design.dim()
    }

    /// Posterior mean and (latent) variance at `x`, variance clamped at 0.
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64), GpError> {
        let (mean, var) = self.predict_raw(x)?;
        Ok((mean, var.max(0.0)))
    }

    /// Like [`GpModel::predict`] but without clamping the variance.
    pub fn predict_raw(&self, x: &[f64]) -> Result<(f64, f64), GpError> {
        if x.len() != self.dim() {
            return Err(GpError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let kstar: Vec<f64> = self
            .design
            .rows()
            .iter()
            .map(|r| self.kernel.from_sq_dist(sq_dist(r, x)))
            .collect();
        let mean = self.y_mean + kstar.iter().zip(self.alpha.iter()).map(|(k, a)| k * a).sum::<f64>();
        let v = forward_solve(self.factor.lower(), &kstar);
        let prior = self.kernel.from_sq_dist(0.0);
        let var = prior - v.iter().map(|t| t * t).sum::<f64>();
        Ok((mean, var))
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        let quad = self.train_y.dot(&self.alpha);
        lml_from_parts(quad, self.factor.half_log_det, self.train_y.len())
    }
}

fn check_targets(design: &Design, y: &[f64]) -> Result<(), GpError> {
    if y.len() != design.len() {
        return Err(GpError::DimensionMismatch {
            expected: design.len(),
            got: y.len(),
        });
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(GpError::NonFiniteTarget(i));
    }
    Ok(())
}

pub fn fit_gp(train_x: &[Vec<f64>], train_y: &[f64], cfg: &KernelConfig) -> Result<GpModel, GpError> {
    let design = Design::new(train_x.to_vec())?;
    fit_with_design(design, train_y, cfg)
}

pub fn fit_with_design(design: Design, train_y: &[f64], cfg: &KernelConfig) -> Result<GpModel, GpError> {
    check_targets(&design, train_y)?;
    let factor = Factor::new(&design, cfg)?;
    Ok(model_from_factor(design, factor, train_y))
}

fn model_from_factor(design: Design, factor: Factor, train_y: &[f64]) -> GpModel {
    let (centered, y_mean) = center(train_y);
    let alpha = factor.solve(&centered);
    GpModel {
        design,
        train_y: DVector::from_vec(centered),
        y_mean,
        kernel: factor.cfg,
        factor,
        alpha: DVector::from_vec(alpha),
    }
}

/// Factors every grid configuration once; failures are kept in place so grid
/// order is preserved.
pub fn factor_grid(design: &Design, grid: &HyperGrid) -> Vec<Result<Factor, GpError>> {
    grid.configs.iter().map(|cfg| Factor::new(design, cfg)).collect()
}

/// Index and value of the best likelihood among `factors` for the centered
/// targets; ties resolve to the earliest entry.
pub fn best_factor(factors: &[Result<Factor, GpError>], centered: &[f64]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, f) in factors.iter().enumerate() {
        let Ok(f) = f else { continue };
        let lml = f.log_marginal_likelihood(centered);
        if !lml.is_finite() {
            continue;
        }
        if best.is_none_or(|(_, b)| lml > b) {
            best = Some((i, lml));
        }
    }
    best
}

pub fn optimize_hyperparams(
    train_x: &[Vec<f64>],
    train_y: &[f64],
    grid: &HyperGrid,
) -> Result<KernelConfig, GpError> {
    Ok(fit_best(train_x, train_y, grid)?.kernel)
}

/// Fits the grid configuration with the highest log marginal likelihood.
pub fn fit_best(train_x: &[Vec<f64>], train_y: &[f64], grid: &HyperGrid) -> Result<GpModel, GpError> {
    let design = Design::new(train_x.to_vec())?;
    fit_best_with_design(design, train_y, grid)
}

pub fn fit_best_with_design(design: Design, train_y: &[f64], grid: &HyperGrid) -> Result<GpModel, GpError> {
    if grid.is_empty() {
        return Err(GpError::EmptyGrid);
    }
    check_targets(&design, train_y)?;
    let mut factors = factor_grid(&design, grid);
    let (centered, _) = center(train_y);
    let (idx, _) = best_factor(&factors, &centered).ok_or(GpError::AllFitsFailed)?;
    let factor = factors.swap_remove(idx).expect("best factor is Ok");
    Ok(model_from_factor(design, factor, train_y))
}
