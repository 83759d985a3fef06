//! `mfkd` command-line front end.
//!
//! Exit codes: 0 on success, 1 on runtime errors, 2 on usage errors.

mod output;
mod synthspec;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use chrono::Utc;
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use mfkd::harness::compare::{mean_std, run_replicates, CurvePoint, MethodSummary, WelchTest};
use mfkd::harness::{
    compare_methods, correlate_column, generate_synthetic_seeded, load_benchmark, Benchmark, Column, Method, SynthConfig,
};
use mfkd::kd::{self, FeatureMap, KdConfig, Logits, MmdKernelSpec, Reduction};
use mfkd::search::{BestArch, SearchConfig, SearchResult, UcbMode};
use mfkd::space::SpaceSpec;
use serde::Serialize;
use serde_json::json;

use output::{ensure_dir, write_curves, write_json, write_trajectories, RunManifest};

#[derive(Parser, Debug)]
#[command(name = "mfkd", version, about = "Multi-fidelity architecture search over tabular benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a searcher for a number of seeded replicates.
    Search(SearchArgs),
    /// Kendall tau of each low-fidelity column against val_acc_high.
    Correlate(CorrelateArgs),
    /// Write a synthetic benchmark file.
    Synth(SynthArgs),
    /// Evaluate distillation losses on fixture files.
    KdEval(KdEvalArgs),
    /// Run several searchers with paired seeds and test the top two.
    Compare(CompareArgs),
}

#[derive(Args, Debug, Clone)]
#[group(id = "source", required = true, multiple = false)]
struct BenchSource {
    /// Benchmark JSONL file; relative paths that do not exist are looked up in $MFKD_DATA_DIR.
    #[arg(long, group = "source")]
    bench: Option<PathBuf>,
    /// Synthetic benchmark, e.g. "tau=0.47,size=1000".
    #[arg(long, group = "source")]
    synthetic: Option<String>,
}

#[derive(Args, Debug, Clone)]
struct BenchOpts {
    #[command(flatten)]
    source: BenchSource,
    /// Accuracies in the file are percentages.
    #[arg(long)]
    percent: bool,
}

#[derive(Args, Debug, Clone)]
struct SearchOpts {
    #[arg(long, default_value_t = 100)]
    n1: usize,
    #[arg(long, default_value_t = 20)]
    n2: usize,
    /// Epochs of a low-fidelity run; default synthetic low cost.
    #[arg(long, default_value_t = 1)]
    e1: u32,
    /// Epochs of a high-fidelity run; default synthetic high cost.
    #[arg(long, default_value_t = 12)]
    e2: u32,
    /// Candidates scored per iteration.
    #[arg(long, default_value_t = 5000)]
    pool: usize,
    /// Budget in seconds per run.
    #[arg(long, default_value_t = 12000.0)]
    budget: f64,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long, value_enum, default_value_t = UcbArg::Variance)]
    ucb_mode: UcbArg,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum UcbArg {
    Variance,
    Stddev,
}

impl SearchOpts {
    fn config(&self) -> SearchConfig {
        SearchConfig {
            n1: self.n1,
            n2: self.n2,
            e1: self.e1,
            e2: self.e2,
            candidate_pool: self.pool,
            budget: self.budget,
            ucb_beta: self.beta,
            ucb_mode: match self.ucb_mode {
                UcbArg::Variance => UcbMode::Variance,
                UcbArg::Stddev => UcbMode::StdDev,
            },
            ..Default::default()
        }
    }
}

#[derive(Args, Debug)]
struct SearchArgs {
    #[command(flatten)]
    bench: BenchOpts,
    #[arg(long)]
    method: Method,
    #[arg(long, default_value_t = 1)]
    runs: usize,
    #[command(flatten)]
    opts: SearchOpts,
    /// Base seed; run k uses seed + k. Generated and printed if omitted.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "mfkd-out")]
    out: PathBuf,
    /// Worker threads for replicates.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
}

#[derive(Args, Debug)]
struct CorrelateArgs {
    #[command(flatten)]
    bench: BenchOpts,
    /// Also write the values as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Seed for synthetic benchmarks.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 6)]
    edges: usize,
    #[arg(long, default_value_t = 5)]
    ops: usize,
    /// Target Kendall tau of val_acc_low.
    #[arg(long)]
    tau: f64,
    /// Target Kendall tau of val_acc_low_logistic.
    #[arg(long, default_value_t = 0.17, conflicts_with = "no_logistic")]
    tau_logistic: f64,
    /// Omit the logistic column.
    #[arg(long)]
    no_logistic: bool,
    #[arg(long, default_value_t = 1.0)]
    cost_low: f64,
    #[arg(long, default_value_t = 12.0)]
    cost_high: f64,
    #[arg(long, default_value_t = 2.0)]
    lengthscale: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct KdEvalArgs {
    /// Teacher feature-map fixture; repeat for several layers.
    #[arg(long = "teacher-features")]
    teacher_features: Vec<PathBuf>,
    /// Student feature-map fixture; one per teacher map.
    #[arg(long = "student-features")]
    student_features: Vec<PathBuf>,
    #[arg(long)]
    student_logits: Option<PathBuf>,
    #[arg(long)]
    teacher_logits: Option<PathBuf>,
    /// Comma-separated class labels, one per logit row.
    #[arg(long, value_delimiter = ',')]
    labels: Vec<usize>,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    #[arg(long, default_value_t = 12.5)]
    nst_beta: f64,
    #[arg(long, default_value_t = 0.0)]
    kernel_c: f64,
    #[arg(long, default_value_t = 2)]
    kernel_b: u32,
    /// Comma-separated teacher channel subset.
    #[arg(long, value_delimiter = ',')]
    subset_t: Vec<usize>,
    /// Comma-separated student channel subset.
    #[arg(long, value_delimiter = ',')]
    subset_s: Vec<usize>,
    #[arg(long, value_enum, default_value_t = ReductionArg::Sum)]
    reduction: ReductionArg,
    /// Directory for results.json and manifest.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum ReductionArg {
    Sum,
    Mean,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[command(flatten)]
    bench: BenchOpts,
    /// Comma-separated methods (at least two).
    #[arg(long, value_delimiter = ',', required = true)]
    methods: Vec<Method>,
    #[arg(long, default_value_t = 100)]
    runs: usize,
    #[command(flatten)]
    opts: SearchOpts,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "mfkd-out")]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    parallel: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Search(a) => cmd_search(a),
        Command::Correlate(a) => cmd_correlate(a),
        Command::Synth(a) => cmd_synth(a),
        Command::KdEval(a) => cmd_kd_eval(a),
        Command::Compare(a) => cmd_compare(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn usage_error(subcommand: &str, kind: ErrorKind, msg: &str) -> ! {
    let mut cmd = Cli::command();
    cmd.build();
    match cmd.find_subcommand_mut(subcommand) {
        Some(sub) => sub.error(kind, msg).exit(),
        None => cmd.error(kind, msg).exit(),
    }
}

fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s = Utc::now().timestamp_nanos_opt().unwrap_or_default() as u64;
        eprintln!("seed: {s} (generated; pass --seed {s} to reproduce)");
        s
    })
}

fn resolve_bench_path(path: &Path) -> PathBuf {
    if path.is_relative() && !path.exists() {
        if let Some(dir) = std::env::var_os("MFKD_DATA_DIR") {
            let candidate = Path::new(&dir).join(path);
            if candidate.exists() {
                return candidate;
            }
        }
    }
    path.to_path_buf()
}

fn load(opts: &BenchOpts, seed: u64, e1: f64, e2: f64) -> Result<Benchmark> {
    match (&opts.source.bench, &opts.source.synthetic) {
        (Some(p), _) => {
            let path = resolve_bench_path(p);
            load_benchmark(&path, opts.percent).with_context(|| format!("loading {}", path.display()))
        }
        (None, Some(s)) => {
            let spec = synthspec::parse(s, e1, e2).context("--synthetic")?;
            Ok(generate_synthetic_seeded(&spec.config, spec.seed.unwrap_or(seed))?)
        }
        (None, None) => unreachable!("clap enforces a source"),
    }
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build()?)
}

#[derive(Serialize)]
struct RunSummary<'a> {
    run: usize,
    seed: u64,
    best: Option<&'a BestArch>,
    spent: f64,
    evaluations: usize,
    ucb_iterations: usize,
    warmup_exceeded_budget: bool,
    space_exhausted: bool,
}

fn cmd_search(a: SearchArgs) -> Result<()> {
    let started = Utc::now();
    if a.runs == 0 {
        usage_error("search", ErrorKind::ValueValidation, "--runs must be at least 1");
    }
    let seed = resolve_seed(a.seed);
    let config = a.opts.config();
    let bench = load(&a.bench, seed, a.opts.e1 as f64, a.opts.e2 as f64)?;
    let results: Vec<SearchResult> = pool(a.parallel)?.install(|| run_replicates(&bench, a.method, a.runs, &config, seed))?;

    let best: Vec<Option<f64>> = results.iter().map(SearchResult::best_test_acc).collect();
    let vals: Vec<f64> = best.iter().flatten().copied().collect();
    let (mean, std) = mean_std(&vals);
    let summary = MethodSummary {
        method: a.method,
        runs: a.runs,
        empty_runs: a.runs - vals.len(),
        mean,
        std,
        best_test_acc: best,
    };
    let per_run: Vec<RunSummary> = results
        .iter()
        .enumerate()
        .map(|(k, r)| RunSummary {
            run: k,
            seed: seed.wrapping_add(k as u64),
            best: r.best.as_ref(),
            spent: r.spent(),
            evaluations: r.trajectory.len(),
            ucb_iterations: r.ucb_iterations,
            warmup_exceeded_budget: r.warmup_exceeded_budget,
            space_exhausted: r.space_exhausted,
        })
        .collect();
    let curves: Vec<CurvePoint> = results
        .iter()
        .enumerate()
        .flat_map(|(k, r)| {
            r.best_so_far(&bench).into_iter().map(move |(spent, acc)| CurvePoint {
                method: a.method,
                run: k,
                spent_seconds: spent,
                best_test_acc: acc,
            })
        })
        .collect();

    ensure_dir(&a.out)?;
    write_json(
        &a.out.join("results.json"),
        &json!({
            "benchmark": bench.name,
            "seed": seed,
            "budget": config.budget,
            "summary": summary,
            "runs": per_run,
        }),
    )?;
    write_trajectories(&a.out.join("trajectory.csv"), &results)?;
    write_curves(&a.out.join("curves.csv"), &curves)?;
    write_json(
        &a.out.join("manifest.json"),
        &RunManifest::new("search", serde_json::to_value(&config)?, Some(seed), Some(bench.name.clone()), started),
    )?;

    for w in per_run.iter().filter(|r| r.warmup_exceeded_budget) {
        eprintln!("warning: run {} spent its budget during warm-up", w.run);
    }
    if summary.empty_runs > 0 {
        eprintln!("note: {} run(s) made no high-fidelity evaluation", summary.empty_runs);
    }
    println!(
        "{}: best test accuracy {:.4} ± {:.4} over {} run(s) on {}",
        a.method, mean, std, a.runs, bench.name
    );
    Ok(())
}

fn cmd_correlate(a: CorrelateArgs) -> Result<()> {
    let seed = a.seed.unwrap_or(0);
    let bench = load(&a.bench, seed, 1.0, 12.0)?;
    let mut rows = Vec::new();
    for col in [Column::Low, Column::LowLogistic] {
        if bench.has_column(col) {
            let tau = correlate_column(&bench, col)?;
            println!("{}\t{:.4}", col.name(), tau);
            rows.push((col.name(), tau));
        }
    }
    if let Some(path) = a.csv {
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
        w.write_record(["column", "kendall_tau"])?;
        for (name, tau) in rows {
            w.write_record([name.to_string(), tau.to_string()])?;
        }
        w.flush()?;
    }
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let seed = resolve_seed(a.seed);
    let spec = SpaceSpec::new(a.edges, a.ops)?;
    let cfg = SynthConfig {
        spec,
        target_tau: a.tau,
        target_tau_logistic: (!a.no_logistic).then_some(a.tau_logistic),
        cost_low: a.cost_low,
        cost_high: a.cost_high,
        lengthscale: a.lengthscale,
        name: format!("synthetic(tau={},{}x{},seed={})", a.tau, a.edges, a.ops, seed),
        ..Default::default()
    };
    let bench = generate_synthetic_seeded(&cfg, seed)?;
    bench.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    println!("wrote {} architectures to {}", bench.len(), a.out.display());
    for col in [Column::Low, Column::LowLogistic] {
        if bench.has_column(col) {
            println!("{}\t{:.4}", col.name(), correlate_column(&bench, col)?);
        }
    }
    Ok(())
}

fn read_fixture(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let (_, rows) = kd::fixture::parse(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(rows)
}

fn cmd_kd_eval(a: KdEvalArgs) -> Result<()> {
    let started = Utc::now();
    if a.teacher_features.len() != a.student_features.len() {
        usage_error(
            "kd-eval",
            ErrorKind::WrongNumberOfValues,
            "--teacher-features and --student-features must be given the same number of times",
        );
    }
    if a.subset_t.is_empty() != a.subset_s.is_empty() {
        usage_error("kd-eval", ErrorKind::MissingRequiredArgument, "--subset-t and --subset-s go together");
    }
    let cfg = KdConfig {
        tau: a.tau,
        lambda: a.lambda,
        nst_beta: a.nst_beta,
        reduction: match a.reduction {
            ReductionArg::Sum => Reduction::Sum,
            ReductionArg::Mean => Reduction::Mean,
        },
    };
    cfg.validate()?;
    let kernel = MmdKernelSpec::polynomial(a.kernel_c, a.kernel_b)?;
    let config = json!({ "kd": cfg, "kernel": kernel });
    println!(
        "config: tau={} lambda={} nst_beta={} kernel_c={} kernel_b={}",
        cfg.tau, cfg.lambda, cfg.nst_beta, kernel.c, kernel.b
    );

    let ft = a
        .teacher_features
        .iter()
        .map(|p| Ok(FeatureMap::from_rows(&read_fixture(p)?)?))
        .collect::<Result<Vec<_>>>()?;
    let fs = a
        .student_features
        .iter()
        .map(|p| Ok(FeatureMap::from_rows(&read_fixture(p)?)?))
        .collect::<Result<Vec<_>>>()?;
    let logits = |p: &Option<PathBuf>| -> Result<Option<Logits>> {
        p.as_ref().map(|p| Ok(Logits::from_rows(&read_fixture(p)?)?)).transpose()
    };
    let student = logits(&a.student_logits)?;
    let teacher = logits(&a.teacher_logits)?;

    let mut values = serde_json::Map::new();
    let mut put = |name: &str, v: serde_json::Value| {
        println!("{name} = {v}");
        values.insert(name.to_string(), v);
    };
    if !ft.is_empty() {
        let mmd: Vec<f64> = ft.iter().zip(&fs).map(|(t, s)| kd::mmd2(t, s, &kernel)).collect::<Result<_, _>>()?;
        put("mmd2", if mmd.len() == 1 { json!(mmd[0]) } else { json!(mmd) });
        if !a.subset_t.is_empty() {
            let sub: Vec<f64> = ft
                .iter()
                .zip(&fs)
                .map(|(t, s)| kd::mmd2_subset(t, s, &a.subset_t, &a.subset_s, &kernel))
                .collect::<Result<_, _>>()?;
            put("mmd2_subset", if sub.len() == 1 { json!(sub[0]) } else { json!(sub) });
        }
    }
    if let (Some(s), Some(t)) = (&student, &teacher) {
        if a.labels.is_empty() {
            bail!("kd_loss needs --labels");
        }
        put("kd_loss", json!(kd::kd_loss(s, t, &a.labels, &cfg)?));
    }
    if let (Some(s), false) = (&student, ft.is_empty()) {
        if a.labels.is_empty() {
            bail!("nst_loss needs --labels");
        }
        put("nst_loss", json!(kd::nst_loss(s, &a.labels, &ft, &fs, &cfg, &kernel)?));
        if !a.subset_t.is_empty() {
            let v = kd::nst_loss_subset(s, &a.labels, &ft, &fs, &a.subset_t, &a.subset_s, &cfg, &kernel)?;
            put("nst_loss_subset", json!(v));
        }
    }
    if values.is_empty() {
        bail!("nothing to evaluate: give feature maps and/or logits");
    }
    if let Some(out) = a.out {
        ensure_dir(&out)?;
        write_json(&out.join("results.json"), &values)?;
        write_json(&out.join("manifest.json"), &RunManifest::new("kd-eval", config, None, None, started))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct CompareResults<'a> {
    benchmark: &'a str,
    runs: usize,
    seed: u64,
    budget: f64,
    methods: &'a [MethodSummary],
    significance: Option<&'a WelchTest>,
}

fn cmd_compare(a: CompareArgs) -> Result<()> {
    let started = Utc::now();
    if a.methods.len() < 2 {
        usage_error("compare", ErrorKind::TooFewValues, "compare needs at least two --methods");
    }
    if a.runs == 0 {
        usage_error("compare", ErrorKind::ValueValidation, "--runs must be at least 1");
    }
    let seed = resolve_seed(a.seed);
    let config = a.opts.config();
    let bench = load(&a.bench, seed, a.opts.e1 as f64, a.opts.e2 as f64)?;
    let report = pool(a.parallel)?.install(|| compare_methods(&bench, &a.methods, a.runs, &config, seed))?;

    ensure_dir(&a.out)?;
    write_json(
        &a.out.join("results.json"),
        &CompareResults {
            benchmark: &report.benchmark,
            runs: report.runs,
            seed: report.seed,
            budget: report.budget,
            methods: &report.methods,
            significance: report.significance.as_ref(),
        },
    )?;
    write_curves(&a.out.join("curves.csv"), &report.curves)?;
    write_json(
        &a.out.join("manifest.json"),
        &RunManifest::new("compare", serde_json::to_value(&config)?, Some(seed), Some(bench.name.clone()), started),
    )?;

    println!("{:<10} {:>8} {:>8} {:>6}", "method", "mean", "std", "runs");
    for m in &report.methods {
        println!("{:<10} {:>8.4} {:>8.4} {:>6}", m.method.name(), m.mean, m.std, m.runs - m.empty_runs);
    }
    match &report.significance {
        Some(w) => println!(
            "{} vs {}: Welch t = {:.3}, df = {:.1}, p = {:.4} ({})",
            w.first,
            w.second,
            w.t,
            w.df,
            w.p_value,
            if w.significant { "significant at 0.05" } else { "not significant at 0.05" }
        ),
        None => println!("significance test skipped: needs at least two runs per method"),
    }
    Ok(())
}
