//! Reference searchers for ablations.

use rand::seq::SliceRandom;
use rand::Rng;

use super::benchmark::{Benchmark, Column};
use super::meter::{BudgetMeter, Evaluator};
use crate::search::{run_mfkd_with_column, run_single_fidelity, BestArch, SearchConfig, SearchError, SearchResult};

/// Uniform sampling without replacement at high fidelity. Stops before the
/// first evaluation that would overrun `budget`, so a budget below one
/// high-fidelity cost yields an empty result.
pub fn run_random_search<R: Rng + ?Sized>(bench: &Benchmark, budget: f64, rng: &mut R) -> Result<SearchResult, SearchError> {
    if !(budget >= 0.0) {
        return Err(SearchError::InvalidConfig("budget must be non-negative".into()));
    }
    let mut order: Vec<usize> = (0..bench.len()).collect();
    order.shuffle(rng);
    let mut ev = Evaluator::new(bench, BudgetMeter::new(budget));
    let mut best: Option<(usize, f64)> = None;
    let mut space_exhausted = true;
    for i in order {
        if ev.meter().spent() + bench.row_at(i).cost_high > budget {
            space_exhausted = false;
            break;
        }
        let rec = ev.evaluate_index(i, Column::High, 0)?;
        if best.is_none_or(|(_, v)| rec.val_acc > v) {
            best = Some((i, rec.val_acc));
        }
    }
    Ok(SearchResult {
        best: best.map(|(i, v)| BestArch {
            arch: bench.spec.arch_at(i),
            val_acc: v,
            test_acc: bench.row_at(i).test_acc_final,
        }),
        trajectory: ev.into_trajectory(),
        top_level: 0,
        ucb_iterations: 0,
        warmup_exceeded_budget: false,
        space_exhausted,
        model_final: None,
    })
}

/// The search loop without a low-fidelity stage: `n2` random high-fidelity
/// evaluations, then UCB on a single GP.
pub fn run_gpr_single_fidelity<R: Rng + ?Sized>(
    bench: &Benchmark,
    config: &SearchConfig,
    rng: &mut R,
) -> Result<SearchResult, SearchError> {
    run_single_fidelity(bench, config, rng)
}

/// Two-fidelity search reading the logistic-loss low-fidelity column.
pub fn run_mf_no_kd<R: Rng + ?Sized>(bench: &Benchmark, config: &SearchConfig, rng: &mut R) -> Result<SearchResult, SearchError> {
    run_mfkd_with_column(bench, Column::LowLogistic, config, rng)
}
