//! Multi-fidelity search: random warm-up at every fidelity, a fusion model
//! over the collected data, then UCB selection at the top fidelity with a
//! refit after each evaluation until the budget is spent.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cokriging::{
    fit_cokriging_on_low, fit_multilevel, CoKrigingError, CoKrigingGrids, CoKrigingModel, MultiLevelModel,
};
use crate::gp::{self, GpError, GpModel};
use crate::harness::{Benchmark, BudgetMeter, Column, EvalRecord, Evaluator, HarnessError};
use crate::space::{sample_indices, Architecture, Encoding, SpaceError};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid search config: {0}")]
    InvalidConfig(String),
    #[error("no candidates to score")]
    EmptyCandidates,
    #[error("no candidate has a finite acquisition score")]
    NoFiniteScore,
    #[error("multi-fidelity search needs at least two levels, got {0}")]
    TooFewLevels(usize),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Fusion(#[from] CoKrigingError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Harness(Box<HarnessError>),
}

impl From<HarnessError> for SearchError {
    fn from(e: HarnessError) -> Self {
        SearchError::Harness(Box::new(e))
    }
}

/// Uncertainty term of the acquisition score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UcbMode {
    /// `mean + beta * variance`
    #[default]
    Variance,
    /// `mean + beta * sqrt(variance)`
    StdDev,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Low-fidelity warm-up size.
    pub n1: usize,
    /// High-fidelity warm-up size.
    pub n2: usize,
    /// Epochs behind a low-fidelity evaluation (informational; costs come from the table).
    pub e1: u32,
    pub e2: u32,
    pub candidate_pool: usize,
    /// Total simulated seconds.
    pub budget: f64,
    pub ucb_beta: f64,
    pub ucb_mode: UcbMode,
    pub grids: CoKrigingGrids,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            n1: 100,
            n2: 20,
            e1: 1,
            e2: 12,
            candidate_pool: 5000,
            budget: 12000.0,
            ucb_beta: 1.0,
            ucb_mode: UcbMode::Variance,
            grids: CoKrigingGrids::default(),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        let bad = |m: &str| Err(SearchError::InvalidConfig(m.into()));
        if self.n1 < 1 {
            return bad("n1 must be at least 1");
        }
        if self.n2 < 1 {
            return bad("n2 must be at least 1");
        }
        if self.candidate_pool < 1 {
            return bad("candidate_pool must be at least 1");
        }
        if !(self.budget > 0.0) || !self.budget.is_finite() {
            return bad("budget must be positive and finite");
        }
        if !(self.ucb_beta >= 0.0) || !self.ucb_beta.is_finite() {
            return bad("ucb_beta must be non-negative and finite");
        }
        if self.grids.low.is_empty() || self.grids.delta.is_empty() || self.grids.rho.is_empty() {
            return bad("hyperparameter grids must be non-empty");
        }
        Ok(())
    }
}

/// One fidelity of a search ladder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelPlan {
    pub column: Column,
    /// Random evaluations at this level before the loop starts.
    pub warmup: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestArch {
    pub arch: Architecture,
    pub val_acc: f64,
    pub test_acc: f64,
}

/// Model state at the end of a run.
#[derive(Debug, Clone)]
pub enum FinalModel {
    Gp(GpModel),
    CoKriging(CoKrigingModel),
    MultiLevel(MultiLevelModel),
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    /// `None` when no top-level evaluation happened.
    pub best: Option<BestArch>,
    pub trajectory: Vec<EvalRecord>,
    /// Level whose records compete for `best`.
    pub top_level: usize,
    pub ucb_iterations: usize,
    pub warmup_exceeded_budget: bool,
    /// The loop stopped because every architecture had been evaluated at the top level.
    pub space_exhausted: bool,
    pub model_final: Option<FinalModel>,
}

impl SearchResult {
    pub fn spent(&self) -> f64 {
        self.trajectory.last().map_or(0.0, |r| r.spent_after)
    }

    pub fn best_test_acc(&self) -> Option<f64> {
        self.best.as_ref().map(|b| b.test_acc)
    }

    /// `(spent_after, test accuracy of the best-so-far)` after every
    /// top-level record.
    pub fn best_so_far(&self, bench: &Benchmark) -> Vec<(f64, f64)> {
        let mut best: Option<(f64, f64)> = None;
        let mut out = Vec::new();
        for r in self.trajectory.iter().filter(|r| r.level == self.top_level) {
            if best.is_none_or(|(v, _)| r.val_acc > v) {
                let test = bench.row(&r.arch).map(|row| row.test_acc_final).unwrap_or(f64::NAN);
                best = Some((r.val_acc, test));
            }
            out.push((r.spent_after, best.expect("set above").1));
        }
        out
    }
}

fn score(mean: f64, var: f64, beta: f64, mode: UcbMode) -> f64 {
    match mode {
        UcbMode::Variance => mean + beta * var,
        UcbMode::StdDev => mean + beta * var.max(0.0).sqrt(),
    }
}

/// Index of the highest UCB score over `(mean, variance)` pairs; ties go to
/// the lowest index and NaN scores are skipped.
pub fn ucb_select_scores(moments: &[(f64, f64)], beta: f64, mode: UcbMode) -> Result<usize, SearchError> {
    if moments.is_empty() {
        return Err(SearchError::EmptyCandidates);
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, &(m, v)) in moments.iter().enumerate() {
        let s = score(m, v, beta, mode);
        if s.is_nan() {
            continue;
        }
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i).ok_or(SearchError::NoFiniteScore)
}

pub fn ucb_select(
    model: &CoKrigingModel,
    candidates: &[Encoding],
    beta: f64,
    mode: UcbMode,
) -> Result<usize, SearchError> {
    let moments = candidates
        .iter()
        .map(|c| model.predict_high(&c.values))
        .collect::<Result<Vec<_>, _>>()?;
    ucb_select_scores(&moments, beta, mode)
}

/// Fusion model seen by the loop: the part below the top level never changes,
/// so its predictions are cached per architecture.
trait Surrogate: Sized {
    fn below_top(&self, x: &[f64]) -> Result<Option<(f64, f64)>, GpError>;
    fn predict_top(&self, below: Option<(f64, f64)>, x: &[f64]) -> Result<(f64, f64), GpError>;
    fn refit_top(&self, x: &[Vec<f64>], y: &[f64], grids: &CoKrigingGrids) -> Result<Self, SearchError>;
    fn into_final(self) -> FinalModel;
}

impl Surrogate for GpModel {
    fn below_top(&self, _x: &[f64]) -> Result<Option<(f64, f64)>, GpError> {
        Ok(None)
    }

    fn predict_top(&self, _below: Option<(f64, f64)>, x: &[f64]) -> Result<(f64, f64), GpError> {
        self.predict(x)
    }

    fn refit_top(&self, x: &[Vec<f64>], y: &[f64], grids: &CoKrigingGrids) -> Result<Self, SearchError> {
        Ok(gp::fit_best(x, y, &grids.delta)?)
    }

    fn into_final(self) -> FinalModel {
        FinalModel::Gp(self)
    }
}

impl Surrogate for CoKrigingModel {
    fn below_top(&self, x: &[f64]) -> Result<Option<(f64, f64)>, GpError> {
        self.gp_low.predict(x).map(Some)
    }

    fn predict_top(&self, below: Option<(f64, f64)>, x: &[f64]) -> Result<(f64, f64), GpError> {
        self.predict_high_with_low(below.expect("cached low prediction"), x)
    }

    fn refit_top(&self, x: &[Vec<f64>], y: &[f64], grids: &CoKrigingGrids) -> Result<Self, SearchError> {
        Ok(fit_cokriging_on_low(Arc::clone(&self.gp_low), x.to_vec(), y.to_vec(), grids)?)
    }

    fn into_final(self) -> FinalModel {
        FinalModel::CoKriging(self)
    }
}

impl Surrogate for MultiLevelModel {
    fn below_top(&self, x: &[f64]) -> Result<Option<(f64, f64)>, GpError> {
        self.predict_level(self.levels.len() - 1, x).map(Some)
    }

    fn predict_top(&self, below: Option<(f64, f64)>, x: &[f64]) -> Result<(f64, f64), GpError> {
        let top = self.levels.last().expect("at least one delta level");
        top.combine(below.expect("cached lower-level prediction"), x)
    }

    fn refit_top(&self, x: &[Vec<f64>], y: &[f64], grids: &CoKrigingGrids) -> Result<Self, SearchError> {
        Ok(MultiLevelModel::refit_top(self, x.to_vec(), y.to_vec(), grids)?)
    }

    fn into_final(self) -> FinalModel {
        FinalModel::MultiLevel(self)
    }
}

/// Warm-up data per level, in plan order.
struct Warmup<'a> {
    ev: Evaluator<'a>,
    data: Vec<(Vec<Vec<f64>>, Vec<f64>)>,
    top_indices: Vec<usize>,
}

fn warm_up<'a, R: Rng + ?Sized>(
    bench: &'a Benchmark,
    plan: &[LevelPlan],
    budget: f64,
    rng: &mut R,
) -> Result<Warmup<'a>, SearchError> {
    let size = bench.len();
    for lp in plan {
        bench.require_column(lp.column)?;
        if lp.warmup > size {
            return Err(SearchError::InvalidConfig(format!(
                "warm-up of {} exceeds the {} architectures in the space",
                lp.warmup, size
            )));
        }
    }
    let mut ev = Evaluator::new(bench, BudgetMeter::new(budget));
    let mut data = Vec::with_capacity(plan.len());
    let mut top_indices = Vec::new();
    for (level, lp) in plan.iter().enumerate() {
        let idx = sample_indices(size, lp.warmup, rng)?;
        let mut x = Vec::with_capacity(idx.len());
        let mut y = Vec::with_capacity(idx.len());
        for &i in &idx {
            let rec = ev.evaluate_index(i, lp.column, level)?;
            x.push(bench.encoding(i).to_vec());
            y.push(rec.val_acc);
        }
        if level + 1 == plan.len() {
            top_indices = idx;
        }
        data.push((x, y));
    }
    Ok(Warmup { ev, data, top_indices })
}

/// Candidate pool for one iteration: the whole unevaluated remainder when it
/// fits, otherwise a uniform sample of `pool` of them.
fn candidate_pool<R: Rng + ?Sized>(evaluated: &[bool], pool: usize, rng: &mut R) -> Result<Vec<usize>, SearchError> {
    let remaining: Vec<usize> = (0..evaluated.len()).filter(|&i| !evaluated[i]).collect();
    if pool >= remaining.len() {
        return Ok(remaining);
    }
    Ok(sample_indices(remaining.len(), pool, rng)?
        .into_iter()
        .map(|k| remaining[k])
        .collect())
}

fn best_of(bench: &Benchmark, trajectory: &[EvalRecord], top_level: usize) -> Option<BestArch> {
    let mut best: Option<&EvalRecord> = None;
    for r in trajectory.iter().filter(|r| r.level == top_level) {
        if best.is_none_or(|b| r.val_acc > b.val_acc) {
            best = Some(r);
        }
    }
    best.map(|r| BestArch {
        arch: r.arch.clone(),
        val_acc: r.val_acc,
        test_acc: bench.row(&r.arch).expect("evaluated arch is in the table").test_acc_final,
    })
}

fn ucb_loop<S: Surrogate, R: Rng + ?Sized>(
    bench: &Benchmark,
    config: &SearchConfig,
    plan: &[LevelPlan],
    fit: impl FnOnce(&[(Vec<Vec<f64>>, Vec<f64>)]) -> Result<S, SearchError>,
    rng: &mut R,
) -> Result<SearchResult, SearchError> {
    config.validate()?;
    let top_level = plan.len() - 1;
    let top_column = plan[top_level].column;
    let Warmup { mut ev, data, top_indices } = warm_up(bench, plan, config.budget, rng)?;
    let warmup_exceeded_budget = ev.meter().spent() > config.budget;

    let mut model = fit(&data)?;
    let (mut x_top, mut y_top) = data.into_iter().last().expect("non-empty plan");
    let mut evaluated = vec![false; bench.len()];
    for &i in &top_indices {
        evaluated[i] = true;
    }
    let mut below: Vec<Option<Option<(f64, f64)>>> = vec![None; bench.len()];
    let mut ucb_iterations = 0;
    let mut space_exhausted = false;

    while !ev.meter().exhausted() {
        let pool = candidate_pool(&evaluated, config.candidate_pool, rng)?;
        if pool.is_empty() {
            space_exhausted = true;
            break;
        }
        let mut moments = Vec::with_capacity(pool.len());
        for &i in &pool {
            let x = bench.encoding(i);
            let b = match below[i] {
                Some(b) => b,
                None => {
                    let b = model.below_top(x)?;
                    below[i] = Some(b);
                    b
                }
            };
            moments.push(model.predict_top(b, x)?);
        }
        let pick = pool[ucb_select_scores(&moments, config.ucb_beta, config.ucb_mode)?];
        let rec = ev.evaluate_index(pick, top_column, top_level)?;
        evaluated[pick] = true;
        x_top.push(bench.encoding(pick).to_vec());
        y_top.push(rec.val_acc);
        model = model.refit_top(&x_top, &y_top, &config.grids)?;
        ucb_iterations += 1;
    }

    let trajectory = ev.into_trajectory();
    Ok(SearchResult {
        best: best_of(bench, &trajectory, top_level),
        trajectory,
        top_level,
        ucb_iterations,
        warmup_exceeded_budget,
        space_exhausted,
        model_final: Some(model.into_final()),
    })
}

fn two_level_plan(config: &SearchConfig, low: Column) -> [LevelPlan; 2] {
    [
        LevelPlan { column: low, warmup: config.n1 },
        LevelPlan { column: Column::High, warmup: config.n2 },
    ]
}

/// Two-fidelity search reading `low` as the cheap column.
pub fn run_mfkd_with_column<R: Rng + ?Sized>(
    bench: &Benchmark,
    low: Column,
    config: &SearchConfig,
    rng: &mut R,
) -> Result<SearchResult, SearchError> {
    let plan = two_level_plan(config, low);
    let grids = config.grids.clone();
    ucb_loop(
        bench,
        config,
        &plan,
        |data| {
            let (x1, y1) = &data[0];
            let (x2, y2) = &data[1];
            let gp_low = Arc::new(gp::fit_best(x1, y1, &grids.low)?);
            Ok(fit_cokriging_on_low(gp_low, x2.clone(), y2.clone(), &grids)?)
        },
        rng,
    )
}

pub fn run_mfkd<R: Rng + ?Sized>(bench: &Benchmark, config: &SearchConfig, rng: &mut R) -> Result<SearchResult, SearchError> {
    run_mfkd_with_column(bench, Column::Low, config, rng)
}

/// Search over any number of fidelities, cheapest first. The last level is
/// the one selected on and reported; `config.n1`/`n2` are ignored in favour
/// of each level's `warmup`.
pub fn run_mfkd_multilevel<R: Rng + ?Sized>(
    bench: &Benchmark,
    levels: &[LevelPlan],
    config: &SearchConfig,
    rng: &mut R,
) -> Result<SearchResult, SearchError> {
    if levels.len() < 2 {
        return Err(SearchError::TooFewLevels(levels.len()));
    }
    if let Some(lp) = levels.iter().find(|lp| lp.warmup == 0) {
        return Err(SearchError::InvalidConfig(format!("warm-up for {} must be at least 1", lp.column.name())));
    }
    let grids = config.grids.clone();
    ucb_loop(bench, config, levels, |data| Ok(fit_multilevel(data, &grids)?), rng)
}

/// UCB over a plain GP on the top-level data alone.
pub(crate) fn run_single_fidelity<R: Rng + ?Sized>(
    bench: &Benchmark,
    config: &SearchConfig,
    rng: &mut R,
) -> Result<SearchResult, SearchError> {
    let plan = [LevelPlan { column: Column::High, warmup: config.n2 }];
    let grids = config.grids.clone();
    ucb_loop(
        bench,
        config,
        &plan,
        |data| {
            let (x, y) = &data[0];
            Ok(gp::fit_best(x, y, &grids.delta)?)
        },
        rng,
    )
}
