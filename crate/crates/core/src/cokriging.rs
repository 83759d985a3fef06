//! Autoregressive multi-fidelity fusion: `y_high(x) = rho * y_low(x) + delta(x)`
//! with `y_low` and `delta` independent GPs.
//!
//! `rho` is chosen by profile likelihood: for every candidate on a 1-D grid the
//! discrepancy GP is fitted to `y_high - rho * mean_low(x_high)` with its own
//! hyperparameter search, and the candidate whose residual GP has the highest
//! log marginal likelihood wins. Candidates are visited in order of increasing
//! `|rho|`, so ties keep the smaller magnitude.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gp::{self, center, Design, GpError, GpModel, HyperGrid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoKrigingError {
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error("rho grid is empty")]
    EmptyRhoGrid,
    #[error("multi-level fusion needs at least two levels, got {0}")]
    TooFewLevels(usize),
    #[error("no rho candidate produced a finite likelihood")]
    NoRhoFit,
}

/// Grids searched when fitting a fusion model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoKrigingGrids {
    pub low: HyperGrid,
    pub delta: HyperGrid,
    pub rho: Vec<f64>,
}

impl Default for CoKrigingGrids {
    fn default() -> Self {
        Self {
            low: HyperGrid::default(),
            delta: HyperGrid::default(),
            rho: rho_grid(-2.0, 3.0, 0.25),
        }
    }
}

/// Inclusive arithmetic grid `lo, lo + step, ..., hi`.
pub fn rho_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step + 1e-9).floor() as i64;
    (0..=n).map(|k| lo + k as f64 * step).collect()
}

/// One autoregressive step: a scale on the previous level plus a discrepancy GP.
#[derive(Debug, Clone)]
pub struct DeltaLevel {
    pub rho: f64,
    pub gp_delta: GpModel,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    /// Log marginal likelihood of `gp_delta` at the chosen `rho`.
    pub log_likelihood: f64,
}

impl DeltaLevel {
    /// Residual targets `gp_delta` was fitted to (uncentered).
    pub fn residual_targets(&self) -> Vec<f64> {
        self.gp_delta
            .train_y
            .iter()
            .map(|v| v + self.gp_delta.y_mean)
            .collect()
    }

    pub(crate) fn combine(&self, prev: (f64, f64), x: &[f64]) -> Result<(f64, f64), GpError> {
        let (md, vd) = self.gp_delta.predict(x)?;
        let mean = self.rho * prev.0 + md;
        let var = self.rho * self.rho * prev.1 + vd;
        Ok((mean, var.max(0.0)))
    }
}

/// Fits `rho` and the discrepancy GP given the previous level's posterior
/// means at `x`.
pub fn fit_delta_level(
    prev_means: &[f64],
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    delta_grid: &HyperGrid,
    rho_grid: &[f64],
) -> Result<DeltaLevel, CoKrigingError> {
    if rho_grid.is_empty() {
        return Err(CoKrigingError::EmptyRhoGrid);
    }
    if delta_grid.is_empty() {
        return Err(GpError::EmptyGrid.into());
    }
    if prev_means.len() != y.len() || x.len() != y.len() {
        return Err(GpError::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        }
        .into());
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(GpError::NonFiniteTarget(i).into());
    }
    let design = Design::new(x.clone())?;
    let factors = gp::factor_grid(&design, delta_grid);
    if factors.iter().all(|f| f.is_err()) {
        return Err(GpError::AllFitsFailed.into());
    }

    let mut order: Vec<f64> = rho_grid.to_vec();
    order.sort_by(|a, b| a.abs().total_cmp(&b.abs()).then(a.total_cmp(b)));

    let mut best: Option<(f64, usize, f64)> = None;
    for &rho in &order {
        let residual = residuals(&y, prev_means, rho);
        let (centered, _) = center(&residual);
        if let Some((idx, lml)) = gp::best_factor(&factors, &centered) {
            if best.is_none_or(|(_, _, b)| lml > b) {
                best = Some((rho, idx, lml));
            }
        }
    }
    let (rho, idx, lml) = best.ok_or(CoKrigingError::NoRhoFit)?;
    let residual = residuals(&y, prev_means, rho);
    let cfg = factors[idx].as_ref().expect("selected factor is Ok").cfg;
    let gp_delta = gp::fit_with_design(design, &residual, &cfg)?;
    Ok(DeltaLevel {
        rho,
        gp_delta,
        x,
        y,
        log_likelihood: lml,
    })
}

fn residuals(y: &[f64], prev: &[f64], rho: f64) -> Vec<f64> {
    y.iter().zip(prev).map(|(yi, mi)| yi - rho * mi).collect()
}

/// Two-level fusion model.
#[derive(Debug, Clone)]
pub struct CoKrigingModel {
    pub gp_low: Arc<GpModel>,
    pub level: DeltaLevel,
}

impl CoKrigingModel {
    pub fn rho(&self) -> f64 {
        self.level.rho
    }

    pub fn gp_delta(&self) -> &GpModel {
        &self.level.gp_delta
    }

    pub fn x2(&self) -> &[Vec<f64>] {
        &self.level.x
    }

    pub fn y2(&self) -> &[f64] {
        &self.level.y
    }

    pub fn dim(&self) -> usize {
        self.gp_low.dim()
    }

    /// Posterior moments of the high-fidelity process at `x`.
    pub fn predict_high(&self, x: &[f64]) -> Result<(f64, f64), GpError> {
        let low = self.gp_low.predict(x)?;
        self.level.combine(low, x)
    }

    /// Same as [`CoKrigingModel::predict_high`] with the low-fidelity
    /// posterior moments at `x` supplied by the caller.
    pub fn predict_high_with_low(&self, low: (f64, f64), x: &[f64]) -> Result<(f64, f64), GpError> {
        self.level.combine(low, x)
    }
}

pub fn fit_cokriging(
    x1: &[Vec<f64>],
    y1: &[f64],
    x2: &[Vec<f64>],
    y2: &[f64],
    grids: &CoKrigingGrids,
) -> Result<CoKrigingModel, CoKrigingError> {
    let gp_low = Arc::new(gp::fit_best(x1, y1, &grids.low)?);
    fit_cokriging_on_low(gp_low, x2.to_vec(), y2.to_vec(), grids)
}

/// Fits only `rho` and the discrepancy GP on top of an existing low model.
pub fn fit_cokriging_on_low(
    gp_low: Arc<GpModel>,
    x2: Vec<Vec<f64>>,
    y2: Vec<f64>,
    grids: &CoKrigingGrids,
) -> Result<CoKrigingModel, CoKrigingError> {
    let low_means = x2
        .iter()
        .map(|x| gp_low.predict(x).map(|(m, _)| m))
        .collect::<Result<Vec<_>, _>>()?;
    let level = fit_delta_level(&low_means, x2, y2, &grids.delta, &grids.rho)?;
    Ok(CoKrigingModel { gp_low, level })
}

/// Refits with one more high-fidelity observation; low-fidelity data and its
/// GP are unchanged.
pub fn update_high(
    model: &CoKrigingModel,
    x: &[f64],
    y: f64,
    grids: &CoKrigingGrids,
) -> Result<CoKrigingModel, CoKrigingError> {
    if x.len() != model.dim() {
        return Err(GpError::DimensionMismatch {
            expected: model.dim(),
            got: x.len(),
        }
        .into());
    }
    let mut x2 = model.level.x.clone();
    let mut y2 = model.level.y.clone();
    x2.push(x.to_vec());
    y2.push(y);
    fit_cokriging_on_low(Arc::clone(&model.gp_low), x2, y2, grids)
}

/// Recursive fusion over any number of fidelity levels, each level depending
/// only on the one below it.
#[derive(Debug, Clone)]
pub struct MultiLevelModel {
    pub base: Arc<GpModel>,
    pub levels: Vec<DeltaLevel>,
}

impl MultiLevelModel {
    pub fn num_levels(&self) -> usize {
        self.levels.len() + 1
    }

    /// Posterior moments at `x` for level `level` (0 is the base).
    pub fn predict_level(&self, level: usize, x: &[f64]) -> Result<(f64, f64), GpError> {
        let mut acc = self.base.predict(x)?;
        for l in &self.levels[..level.min(self.levels.len())] {
            acc = l.combine(acc, x)?;
        }
        Ok(acc)
    }

    pub fn predict_top(&self, x: &[f64]) -> Result<(f64, f64), GpError> {
        self.predict_level(self.levels.len(), x)
    }

    /// Top-level moments given the base model's moments at `x`.
    pub fn predict_top_with_base(&self, base: (f64, f64), x: &[f64]) -> Result<(f64, f64), GpError> {
        let mut acc = base;
        for l in &self.levels {
            acc = l.combine(acc, x)?;
        }
        Ok(acc)
    }

    /// Rebuilds the top level with extra data; lower levels are kept.
    pub fn refit_top(
        &self,
        x: Vec<Vec<f64>>,
        y: Vec<f64>,
        grids: &CoKrigingGrids,
    ) -> Result<MultiLevelModel, CoKrigingError> {
        let below = MultiLevelModel {
            base: Arc::clone(&self.base),
            levels: self.levels[..self.levels.len() - 1].to_vec(),
        };
        let prev = x
            .iter()
            .map(|xi| below.predict_top(xi).map(|(m, _)| m))
            .collect::<Result<Vec<_>, _>>()?;
        let top = fit_delta_level(&prev, x, y, &grids.delta, &grids.rho)?;
        let mut levels = below.levels;
        levels.push(top);
        Ok(MultiLevelModel {
            base: below.base,
            levels,
        })
    }
}

impl From<CoKrigingModel> for MultiLevelModel {
    fn from(m: CoKrigingModel) -> Self {
        Self {
            base: m.gp_low,
            levels: vec![m.level],
        }
    }
}

/// `datasets` run from cheapest to most expensive fidelity.
pub fn fit_multilevel(
    datasets: &[(Vec<Vec<f64>>, Vec<f64>)],
    grids: &CoKrigingGrids,
) -> Result<MultiLevelModel, CoKrigingError> {
    if datasets.len() < 2 {
        return Err(CoKrigingError::TooFewLevels(datasets.len()));
    }
    let (x0, y0) = &datasets[0];
    let base = Arc::new(gp::fit_best(x0, y0, &grids.low)?);
    let mut model = MultiLevelModel {
        base,
        levels: Vec::with_capacity(datasets.len() - 1),
    };
    for (x, y) in &datasets[1..] {
        let prev = x
            .iter()
            .map(|xi| model.predict_top(xi).map(|(m, _)| m))
            .collect::<Result<Vec<_>, _>>()?;
        let level = fit_delta_level(&prev, x.clone(), y.clone(), &grids.delta, &grids.rho)?;
        model.levels.push(level);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::KernelConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..d).map(|_| rng.random::<f64>() * 3.0).collect()).collect()
    }

    fn f_low(x: &[f64]) -> f64 {
        x.iter().map(|v| v.sin()).sum()
    }

    #[test]
    fn default_rho_grid() {
        let g = CoKrigingGrids::default().rho;
        assert_eq!(g.len(), 21);
        assert_eq!(g[0], -2.0);
        assert_eq!(g[20], 3.0);
        assert!(g.contains(&0.0) && g.contains(&1.0) && g.contains(&2.0));
    }

    #[test]
    fn proportional_data_recovers_rho_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x1 = points(&mut rng, 15, 2);
        let y1: Vec<f64> = x1.iter().map(|x| f_low(x)).collect();
        let grids = CoKrigingGrids::default();
        let gp_low = Arc::new(gp::fit_best(&x1, &y1, &grids.low).unwrap());
        let x2 = points(&mut rng, 6, 2);
        let y2: Vec<f64> = x2.iter().map(|x| 2.0 * gp_low.predict(x).unwrap().0).collect();
        let m = fit_cokriging(&x1, &y1, &x2, &y2, &grids).unwrap();
        assert_eq!(m.rho(), 2.0);
        for r in m.level.residual_targets() {
            assert!(r.abs() < 1e-8, "residual {r}");
        }
    }

    #[test]
    fn identical_fidelities_pick_rho_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = points(&mut rng, 10, 2);
        let y: Vec<f64> = x.iter().map(|x| f_low(x)).collect();
        let grids = CoKrigingGrids::default();
        let m = fit_cokriging(&x, &y, &x, &y, &grids).unwrap();
        assert_eq!(m.rho(), 1.0);
        for r in m.level.residual_targets() {
            assert!(r.abs() < 1e-2, "residual {r}");
        }
        for (xi, yi) in x.iter().zip(&y) {
            let (mh, _) = m.predict_high(xi).unwrap();
            let (ml, _) = m.gp_low.predict(xi).unwrap();
            assert!((mh - ml).abs() < 1e-2);
            assert!((mh - yi).abs() < 1e-2);
        }
    }

    #[test]
    fn rho_zero_collapses_to_single_fidelity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x1 = points(&mut rng, 12, 2);
        let y1: Vec<f64> = x1.iter().map(|x| f_low(x)).collect();
        let x2 = points(&mut rng, 7, 2);
        let y2: Vec<f64> = x2.iter().map(|x| f_low(x) * 0.5 + x[0]).collect();
        let grids = CoKrigingGrids {
            rho: vec![0.0],
            ..Default::default()
        };
        let m = fit_cokriging(&x1, &y1, &x2, &y2, &grids).unwrap();
        let plain = gp::fit_best(&x2, &y2, &grids.delta).unwrap();
        for x in points(&mut rng, 50, 2) {
            let (a, va) = m.predict_high(&x).unwrap();
            let (b, vb) = plain.predict(&x).unwrap();
            assert!((a - b).abs() <= 1e-10 && (va - vb).abs() <= 1e-10);
            assert_eq!(m.predict_high(&x).unwrap(), m.gp_delta().predict(&x).unwrap());
        }
    }

    #[test]
    fn one_low_one_high_point_matches_scalar_oracle() {
        // Single-config grids make every stage a 1x1 system.
        let cfg_low = KernelConfig::rbf(1.0, 2.0, 0.5).unwrap();
        let cfg_d = KernelConfig::rbf(0.5, 0.3, 0.1).unwrap();
        let grids = CoKrigingGrids {
            low: HyperGrid::single(cfg_low),
            delta: HyperGrid::single(cfg_d),
            rho: vec![1.5],
        };
        let (x1, y1) = (vec![0.0], 4.0);
        let (x2, y2) = (vec![1.0], 7.0);
        let m = fit_cokriging(&[x1.clone()], &[y1], &[x2.clone()], &[y2], &grids).unwrap();
        let k = |c: &KernelConfig, a: f64, b: f64| c.signal_variance * (-(a - b).powi(2) / (2.0 * c.lengthscale.powi(2))).exp();

        // Centered single-point GPs predict their own mean everywhere.
        let mu_low_x2 = y1;
        let resid = y2 - 1.5 * mu_low_x2;
        let xt = 0.4;
        let var_low = cfg_low.signal_variance - k(&cfg_low, xt, 0.0).powi(2) / (cfg_low.signal_variance + cfg_low.noise_variance);
        let var_d = cfg_d.signal_variance - k(&cfg_d, xt, 1.0).powi(2) / (cfg_d.signal_variance + cfg_d.noise_variance);
        let (mean, var) = m.predict_high(&[xt]).unwrap();
        assert!((mean - (1.5 * y1 + resid)).abs() < 1e-12);
        assert!((var - (2.25 * var_low + var_d)).abs() < 1e-12);
    }

    #[test]
    fn variance_decomposes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x1 = points(&mut rng, 10, 3);
        let y1: Vec<f64> = x1.iter().map(|x| f_low(x)).collect();
        let x2 = points(&mut rng, 5, 3);
        let y2: Vec<f64> = x2.iter().map(|x| 1.3 * f_low(x) + 0.2).collect();
        let m = fit_cokriging(&x1, &y1, &x2, &y2, &CoKrigingGrids::default()).unwrap();
        for x in points(&mut rng, 30, 3) {
            let (ml, vl) = m.gp_low.predict(&x).unwrap();
            let (md, vd) = m.gp_delta().predict(&x).unwrap();
            let (mh, vh) = m.predict_high(&x).unwrap();
            let rho = m.rho();
            assert!((mh - (rho * ml + md)).abs() < 1e-12);
            assert!((vh - (rho * rho * vl + vd)).abs() < 1e-12);
            assert!(vh >= 0.0);
        }
    }

    #[test]
    fn update_shrinks_variance_and_interpolates() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x1 = points(&mut rng, 12, 2);
        let y1: Vec<f64> = x1.iter().map(|x| f_low(x)).collect();
        let x2 = points(&mut rng, 4, 2);
        let y2: Vec<f64> = x2.iter().map(|x| f_low(x) + 0.3 * x[1]).collect();
        let grids = CoKrigingGrids::default();
        let m = fit_cokriging(&x1, &y1, &x2, &y2, &grids).unwrap();
        let xn = vec![1.1, 2.2];
        let yn = f_low(&xn) + 0.3 * xn[1];
        let (_, before) = m.predict_high(&xn).unwrap();
        let u = update_high(&m, &xn, yn, &grids).unwrap();
        let (mean, after) = u.predict_high(&xn).unwrap();
        assert!((mean - yn).abs() < 1e-3);
        assert!(after < before - 1e-8);
        assert_eq!(u.x2().len(), 5);
        assert!(Arc::ptr_eq(&u.gp_low, &m.gp_low));
    }

    #[test]
    fn update_with_duplicate_point_keeps_predictions() {
        // Targets are centered on their sample mean, which a duplicate shifts,
        // so agreement is checked where the data pins the posterior down.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x1 = points(&mut rng, 10, 2);
        let y1: Vec<f64> = x1.iter().map(|x| f_low(x)).collect();
        let x2 = points(&mut rng, 5, 2);
        let y2: Vec<f64> = x2.iter().map(|x| 0.8 * f_low(x) - 0.1).collect();
        let grids = CoKrigingGrids {
            delta: HyperGrid::single(KernelConfig::rbf(1.0, 0.1, 1e-8).unwrap()),
            ..Default::default()
        };
        let m = fit_cokriging(&x1, &y1, &x2, &y2, &grids).unwrap();
        let u = update_high(&m, &x2[2], y2[2], &grids).unwrap();
        assert_eq!(u.rho(), m.rho());
        for x in &x2 {
            let (a, _) = m.predict_high(x).unwrap();
            let (b, _) = u.predict_high(x).unwrap();
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn refit_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x1 = points(&mut rng, 9, 2);
        let y1: Vec<f64> = x1.iter().map(|x| f_low(x)).collect();
        let x2 = points(&mut rng, 4, 2);
        let y2: Vec<f64> = x2.iter().map(|x| -f_low(x)).collect();
        let g = CoKrigingGrids::default();
        let a = fit_cokriging(&x1, &y1, &x2, &y2, &g).unwrap();
        let b = fit_cokriging(&x1, &y1, &x2, &y2, &g).unwrap();
        assert_eq!(a.rho(), b.rho());
        let t = vec![0.5, 0.5];
        assert_eq!(a.predict_high(&t).unwrap(), b.predict_high(&t).unwrap());
    }

    #[test]
    fn bias_is_absorbed_by_delta() {
        // High fidelity is an affine transform of low plus a bump that moves
        // the argmax; predictions must still match high-fidelity data.
        let x: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64 * 0.25]).collect();
        let y1: Vec<f64> = x.iter().map(|v| (v[0] - 1.0).powi(2) * -1.0).collect();
        let y2: Vec<f64> = x
            .iter()
            .zip(&y1)
            .map(|(v, l)| 0.5 * l + 0.3 + 1.5 * (-(v[0] - 2.5f64).powi(2) / 0.2).exp())
            .collect();
        let am = |v: &[f64]| v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_ne!(am(&y1), am(&y2));
        let m = fit_cokriging(&x, &y1, &x, &y2, &CoKrigingGrids::default()).unwrap();
        for (xi, yi) in x.iter().zip(&y2) {
            let (mh, _) = m.predict_high(xi).unwrap();
            assert!((mh - yi).abs() < 0.05, "{mh} vs {yi}");
        }
    }

    #[test]
    fn multilevel_two_levels_matches_cokriging() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x1 = points(&mut rng, 10, 2);
        let y1: Vec<f64> = x1.iter().map(|x| f_low(x)).collect();
        let x2 = points(&mut rng, 5, 2);
        let y2: Vec<f64> = x2.iter().map(|x| 1.2 * f_low(x) + x[0]).collect();
        let g = CoKrigingGrids::default();
        let ck = fit_cokriging(&x1, &y1, &x2, &y2, &g).unwrap();
        let ml = fit_multilevel(&[(x1, y1), (x2, y2)], &g).unwrap();
        assert_eq!(ml.levels[0].rho, ck.rho());
        for x in points(&mut rng, 30, 2) {
            let (a, va) = ck.predict_high(&x).unwrap();
            let (b, vb) = ml.predict_top(&x).unwrap();
            assert!((a - b).abs() <= 1e-10 && (va - vb).abs() <= 1e-10);
        }
    }

    #[test]
    fn multilevel_identical_levels_collapse() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = points(&mut rng, 10, 2);
        let y: Vec<f64> = x.iter().map(|x| f_low(x)).collect();
        let d = (x.clone(), y.clone());
        let ml = fit_multilevel(&[d.clone(), d.clone(), d], &CoKrigingGrids::default()).unwrap();
        assert_eq!(ml.num_levels(), 3);
        for level in &ml.levels {
            assert_eq!(level.rho, 1.0);
            for r in level.residual_targets() {
                assert!(r.abs() < 1e-2);
            }
        }
    }

    #[test]
    fn multilevel_needs_two_levels() {
        let d = (vec![vec![0.0]], vec![1.0]);
        assert_eq!(
            fit_multilevel(&[d], &CoKrigingGrids::default()).unwrap_err(),
            CoKrigingError::TooFewLevels(1)
        );
    }

    #[test]
    fn empty_rho_grid_is_an_error() {
        let g = CoKrigingGrids {
            rho: vec![],
            ..Default::default()
        };
        assert_eq!(
            fit_cokriging(&[vec![0.0]], &[1.0], &[vec![1.0]], &[2.0], &g).unwrap_err(),
            CoKrigingError::EmptyRhoGrid
        );
    }
}
