//! `--synthetic key=value,...` descriptions.

use anyhow::{anyhow, bail, Context, Result};
use mfkd::harness::SynthConfig;
use mfkd::space::SpaceSpec;

/// Parsed `--synthetic` value plus the seed its generator should use.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub config: SynthConfig,
    pub seed: Option<u64>,
}

/// Largest edge count up to 6 for which `size` is a perfect power.
pub fn spec_for_size(size: usize) -> Result<SpaceSpec> {
    for edges in (1..=6u32).rev() {
        let ops = (size as f64).powf(1.0 / edges as f64).round() as usize;
        if ops >= 2 && ops.checked_pow(edges) == Some(size) {
            return Ok(SpaceSpec::new(edges as usize, ops)?);
        }
    }
    bail!("size {size} is not ops^edges for any edges in 1..=6")
}

/// Keys: `tau`, `tau_logistic` (or `none`), `size` or `edges`+`ops`,
/// `cost_low`, `cost_high`, `lengthscale`, `seed`.
pub fn parse(s: &str, cost_low: f64, cost_high: f64) -> Result<SynthSpec> {
    let mut config = SynthConfig {
        cost_low,
        cost_high,
        ..Default::default()
    };
    let mut size = None;
    let (mut edges, mut ops) = (None, None);
    let mut seed = None;
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| anyhow!("expected key=value, got {part:?}"))?;
        let num = || v.parse::<f64>().with_context(|| format!("{k}: not a number: {v:?}"));
        let int = || v.parse::<usize>().with_context(|| format!("{k}: not an integer: {v:?}"));
        match k {
            "tau" => config.target_tau = num()?,
            "tau_logistic" if v == "none" => config.target_tau_logistic = None,
            "tau_logistic" => config.target_tau_logistic = Some(num()?),
            "size" => size = Some(int()?),
            "edges" => edges = Some(int()?),
            "ops" => ops = Some(int()?),
            "cost_low" => config.cost_low = num()?,
            "cost_high" => config.cost_high = num()?,
            "lengthscale" => config.lengthscale = num()?,
            "seed" => seed = Some(v.parse::<u64>().with_context(|| format!("seed: {v:?}"))?),
            _ => bail!("unknown synthetic key {k:?}"),
        }
    }
    config.spec = match (size, edges, ops) {
        (None, Some(e), Some(o)) => SpaceSpec::new(e, o)?,
        (Some(n), None, None) => spec_for_size(n)?,
        (None, None, None) => SpaceSpec::default(),
        _ => bail!("give either size or both edges and ops"),
    };
    config.name = format!(
        "synthetic(tau={},{}x{})",
        config.target_tau, config.spec.num_edges, config.spec.num_ops
    );
    Ok(SynthSpec { config, seed })
}
