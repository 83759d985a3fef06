//! Synthetic benchmarks with a controlled rank correlation between fidelities.
//!
//! The high-fidelity surface is an exact draw from a zero-mean GP with an RBF
//! kernel over the one-hot encodings. On one-hot blocks the squared distance
//! is twice the Hamming distance, so the kernel factorizes over edges and the
//! Gram matrix of the whole space is a Kronecker product of small per-edge
//! matrices. Its Cholesky factor is the Kronecker product of the per-edge
//! factors, which lets the sample be drawn without forming the full matrix.
//!
//! Low-fidelity columns are the standardized surface plus Gaussian noise whose
//! scale is bisected until the Kendall tau hits the target.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::benchmark::{BenchRow, Benchmark};
use super::kendall::kendall_tau;
use super::HarnessError;
use crate::gp::cholesky_lower;
use crate::space::SpaceSpec;

pub const CALIBRATION_STEPS: usize = 50;
pub const CALIBRATION_TOLERANCE: f64 = 0.02;
const ACC_LO: f64 = 0.3;
const ACC_HI: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub spec: SpaceSpec,
    /// Kendall tau between `val_acc_low` and `val_acc_high`.
    pub target_tau: f64,
    /// Target for the `val_acc_low_logistic` column; `None` omits the column.
    pub target_tau_logistic: Option<f64>,
    pub cost_low: f64,
    pub cost_high: f64,
    pub lengthscale: f64,
    /// Std of the noise separating final test accuracy from the surface, in
    /// units of the surface's std.
    pub test_noise: f64,
    pub name: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            spec: SpaceSpec::default(),
            target_tau: 0.47,
            target_tau_logistic: Some(0.17),
            cost_low: 1.0,
            cost_high: 12.0,
            lengthscale: 2.0,
            test_noise: 0.1,
            name: "synthetic".into(),
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<(), HarnessError> {
        for tau in std::iter::once(self.target_tau).chain(self.target_tau_logistic) {
            if !(tau > 0.0 && tau < 1.0) {
                return Err(HarnessError::InvalidTau(tau));
            }
        }
        if !(self.lengthscale > 0.0) || !self.lengthscale.is_finite() {
            return Err(HarnessError::InvalidSynth(format!("lengthscale {}", self.lengthscale)));
        }
        if !(self.test_noise >= 0.0) {
            return Err(HarnessError::InvalidSynth(format!("test_noise {}", self.test_noise)));
        }
        if !(self.cost_low >= 0.0 && self.cost_high >= 0.0) {
            return Err(HarnessError::InvalidSynth("negative cost".into()));
        }
        Ok(())
    }
}

/// Per-edge kernel factor: `r` off the diagonal, 1 on it, with `r = exp(-1/l^2)`.
fn edge_factor(num_ops: usize, lengthscale: f64) -> Result<DMatrix<f64>, HarnessError> {
    let r = (-1.0 / (lengthscale * lengthscale)).exp();
    let m = DMatrix::from_fn(num_ops, num_ops, |i, j| if i == j { 1.0 } else { r });
    cholesky_lower(&m).ok_or_else(|| HarnessError::InvalidSynth("edge kernel is not positive definite".into()))
}

/// Applies `L (x) L (x) ... (x) L` (one factor per edge) to `z`, where `z` is
/// laid out in canonical architecture order (edge 0 most significant).
pub fn kronecker_apply(l: &DMatrix<f64>, num_edges: usize, z: &[f64]) -> Vec<f64> {
    let o = l.nrows();
    let mut cur = z.to_vec();
    let mut next = vec![0.0; cur.len()];
    for e in 0..num_edges {
        let stride = o.pow((num_edges - 1 - e) as u32);
        let block = stride * o;
        for base in (0..cur.len()).step_by(block) {
            for off in 0..stride {
                for i in 0..o {
                    let mut s = 0.0;
                    for j in 0..=i {
                        s += l[(i, j)] * cur[base + j * stride + off];
                    }
                    next[base + i * stride + off] = s;
                }
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    cur
}

/// One GP sample over the whole space, in canonical order.
pub fn sample_surface<R: Rng + ?Sized>(spec: &SpaceSpec, lengthscale: f64, rng: &mut R) -> Result<Vec<f64>, HarnessError> {
    let size = spec.size().ok_or(HarnessError::SpaceTooLarge)?;
    let l = edge_factor(spec.num_ops, lengthscale)?;
    let z: Vec<f64> = (0..size).map(|_| rng.sample(StandardNormal)).collect();
    Ok(kronecker_apply(&l, spec.num_edges, &z))
}

fn standardize(v: &[f64]) -> Vec<f64> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
    v.iter().map(|x| (x - mean) / sd).collect()
}

fn rescale(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        v.iter().map(|x| ACC_LO + (ACC_HI - ACC_LO) * (x - lo) / (hi - lo)).collect()
    } else {
        vec![0.5 * (ACC_LO + ACC_HI); v.len()]
    }
}

/// Finds a noise scale `s` such that `tau(anchor + s * noise, target_col)` is
/// close to `target`; returns the rescaled noisy column and its tau.
fn calibrate(anchor: &[f64], noise: &[f64], reference: &[f64], target: f64) -> Result<(Vec<f64>, f64), HarnessError> {
    let make = |s: f64| -> Vec<f64> { rescale(&anchor.iter().zip(noise).map(|(a, e)| a + s * e).collect::<Vec<_>>()) };
    let tau_at = |s: f64| -> Result<(Vec<f64>, f64), HarnessError> {
        let col = make(s);
        let t = kendall_tau(&col, reference)?;
        Ok((col, t))
    };

    let mut lo = 0.0;
    let mut hi = 1.0;
    while tau_at(hi)?.1 > target {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(HarnessError::CalibrationFailure { target, achieved: tau_at(hi)?.1 });
        }
    }
    let mut best: Option<(Vec<f64>, f64)> = None;
    for _ in 0..CALIBRATION_STEPS {
        let mid = 0.5 * (lo + hi);
        let (col, t) = tau_at(mid)?;
        if best.as_ref().is_none_or(|(_, bt)| (t - target).abs() < (bt - target).abs()) {
            best = Some((col, t));
        }
        if (t - target).abs() <= 1e-3 {
            break;
        }
        if t > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (col, t) = best.expect("at least one step");
    if (t - target).abs() > CALIBRATION_TOLERANCE {
        return Err(HarnessError::CalibrationFailure { target, achieved: t });
    }
    Ok((col, t))
}

/// Builds a complete synthetic benchmark; deterministic given the rng state.
pub fn generate_synthetic<R: Rng + ?Sized>(cfg: &SynthConfig, rng: &mut R) -> Result<Benchmark, HarnessError> {
    cfg.validate()?;
    let size = cfg.spec.size().ok_or(HarnessError::SpaceTooLarge)?;
    if size < 2 {
        return Err(HarnessError::InvalidSynth("space needs at least two architectures".into()));
    }
    let surface = standardize(&sample_surface(&cfg.spec, cfg.lengthscale, rng)?);
    let normals = |rng: &mut R| -> Vec<f64> { (0..size).map(|_| rng.sample(StandardNormal)).collect() };
    let noise_low = normals(rng);
    let noise_logistic = cfg.target_tau_logistic.map(|_| normals(rng));
    let noise_test = normals(rng);

    let high = rescale(&surface);
    let (low, _) = calibrate(&surface, &noise_low, &high, cfg.target_tau)?;
    let logistic = match (cfg.target_tau_logistic, noise_logistic) {
        (Some(t), Some(n)) => Some(calibrate(&surface, &n, &high, t)?.0),
        _ => None,
    };
    let test = rescale(&surface.iter().zip(&noise_test).map(|(s, e)| s + cfg.test_noise * e).collect::<Vec<_>>());

    let rows = (0..size)
        .map(|i| BenchRow {
            val_acc_low: low[i],
            val_acc_low_logistic: logistic.as_ref().map(|c| c[i]),
            val_acc_high: high[i],
            test_acc_final: test[i],
            cost_low: cfg.cost_low,
            cost_high: cfg.cost_high,
        })
        .collect();
    Benchmark::new(cfg.spec, cfg.name.clone(), rows)
}

/// [`generate_synthetic`] with a ChaCha8 stream seeded from `seed`.
pub fn generate_synthetic_seeded(cfg: &SynthConfig, seed: u64) -> Result<Benchmark, HarnessError> {
    generate_synthetic(cfg, &mut ChaCha8Rng::seed_from_u64(seed))
}
