//! Repeated seeded runs of several searchers on one benchmark.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::baselines::{run_gpr_single_fidelity, run_mf_no_kd, run_random_search};
use super::benchmark::Benchmark;
use super::HarnessError;
use crate::search::{run_mfkd, SearchConfig, SearchError, SearchResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "mfkd")]
    Mfkd,
    #[serde(rename = "random")]
    Random,
    #[serde(rename = "gpr")]
    Gpr,
    #[serde(rename = "mf-no-kd")]
    MfNoKd,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Mfkd, Method::Random, Method::Gpr, Method::MfNoKd];

    pub fn name(self) -> &'static str {
        match self {
            Method::Mfkd => "mfkd",
            Method::Random => "random",
            Method::Gpr => "gpr",
            Method::MfNoKd => "mf-no-kd",
        }
    }

    /// One run with its own rng stream.
    pub fn run(self, bench: &Benchmark, config: &SearchConfig, seed: u64) -> Result<SearchResult, SearchError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut r = match self {
            Method::Mfkd => run_mfkd(bench, config, &mut rng),
            Method::Random => run_random_search(bench, config.budget, &mut rng),
            Method::Gpr => run_gpr_single_fidelity(bench, config, &mut rng),
            Method::MfNoKd => run_mf_no_kd(bench, config, &mut rng),
        }?;
        r.model_final = None;
        Ok(r)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method {s:?} (expected mfkd, random, gpr or mf-no-kd)"))
    }
}

/// Runs `runs` replicates; run `k` uses seed `seed + k`. Output is in run
/// order regardless of scheduling.
pub fn run_replicates(
    bench: &Benchmark,
    method: Method,
    runs: usize,
    config: &SearchConfig,
    seed: u64,
) -> Result<Vec<SearchResult>, SearchError> {
    (0..runs)
        .into_par_iter()
        .map(|k| method.run(bench, config, seed.wrapping_add(k as u64)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub runs: usize,
    /// Runs that produced no top-level evaluation.
    pub empty_runs: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1); 0 for a single run.
    pub std: f64,
    pub best_test_acc: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WelchTest {
    pub first: Method,
    pub second: Method,
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub method: Method,
    pub run: usize,
    pub spent_seconds: f64,
    pub best_test_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub benchmark: String,
    pub runs: usize,
    pub seed: u64,
    pub budget: f64,
    pub methods: Vec<MethodSummary>,
    /// Between the two methods with the highest means; absent with fewer
    /// than two methods or fewer than two runs each.
    pub significance: Option<WelchTest>,
    pub curves: Vec<CurvePoint>,
}

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Two-sided Welch t-test; `None` if either sample has fewer than 2 values.
/// Zero spread on both sides gives p = 1 for equal means and p = 0 otherwise.
pub fn welch(a: &[f64], b: &[f64]) -> Option<(f64, f64, f64)> {
    if a.len() < 2 || b.len() < 2 {
        return None;
    }
    let (ma, sa) = mean_std(a);
    let (mb, sb) = mean_std(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let va = sa * sa / na;
    let vb = sb * sb / nb;
    let se2 = va + vb;
    let diff = ma - mb;
    if se2 == 0.0 {
        let p = if diff == 0.0 { 1.0 } else { 0.0 };
        let t = if diff == 0.0 { 0.0 } else { diff.signum() * f64::INFINITY };
        return Some((t, na + nb - 2.0, p));
    }
    let t = diff / se2.sqrt();
    let df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Some((t, df, p))
}

pub fn compare_methods(
    bench: &Benchmark,
    methods: &[Method],
    runs: usize,
    config: &SearchConfig,
    seed: u64,
) -> Result<Report, HarnessError> {
    if runs == 0 {
        return Err(HarnessError::NoRuns);
    }
    let jobs: Vec<(usize, usize)> = (0..methods.len()).flat_map(|m| (0..runs).map(move |k| (m, k))).collect();
    let results: Vec<SearchResult> = jobs
        .par_iter()
        .map(|&(m, k)| methods[m].run(bench, config, seed.wrapping_add(k as u64)))
        .collect::<Result<_, _>>()?;

    let mut summaries = Vec::with_capacity(methods.len());
    let mut curves = Vec::new();
    for (m, &method) in methods.iter().enumerate() {
        let rs = &results[m * runs..(m + 1) * runs];
        let best: Vec<Option<f64>> = rs.iter().map(|r| r.best_test_acc()).collect();
        let vals: Vec<f64> = best.iter().flatten().copied().collect();
        let (mean, std) = mean_std(&vals);
        summaries.push(MethodSummary {
            method,
            runs,
            empty_runs: runs - vals.len(),
            mean,
            std,
            best_test_acc: best,
        });
        for (k, r) in rs.iter().enumerate() {
            for (spent, acc) in r.best_so_far(bench) {
                curves.push(CurvePoint {
                    method,
                    run: k,
                    spent_seconds: spent,
                    best_test_acc: acc,
                });
            }
        }
    }

    let mut ranked: Vec<usize> = (0..summaries.len()).filter(|&i| !summaries[i].mean.is_nan()).collect();
    ranked.sort_by(|&i, &j| summaries[j].mean.total_cmp(&summaries[i].mean).then(i.cmp(&j)));
    let significance = match ranked[..] {
        [i, j, ..] => {
            let a: Vec<f64> = summaries[i].best_test_acc.iter().flatten().copied().collect();
            let b: Vec<f64> = summaries[j].best_test_acc.iter().flatten().copied().collect();
            welch(&a, &b).map(|(t, df, p)| WelchTest {
                first: summaries[i].method,
                second: summaries[j].method,
                t,
                df,
                p_value: p,
                significant: p < SIGNIFICANCE_LEVEL,
            })
        }
        _ => None,
    };

    Ok(Report {
        benchmark: bench.name.clone(),
        runs,
        seed,
        budget: config.budget,
        methods: summaries,
        significance,
        curves,
    })
}
