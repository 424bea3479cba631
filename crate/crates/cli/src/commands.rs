use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;

use forkcast_core::estimate::{
    add_zero_miners, confidence_band, estimate_hash_rates, fit_family, fit_moments, BandConfig, MomentPair,
};
use forkcast_core::forkrate::{fork_rate, hhi, implied_delta0, implied_hhi, MethodChoice};
use forkcast_core::ingest::{read_blocks, BlockRow};
use forkcast_core::simulate::{simulate_fork_rate, Resampling, SimConfig};
use forkcast_core::{BlockCounts, HashRateModel, NullFamily};
use serde::Serialize;

use crate::{BandArgs, CliError, CountsArgs, FitArgs, FitFamily, ForkrateArgs, ImpliedArgs, ImpliedTarget, ModelArgs, SimulateArgs};

pub fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    println!("{text}");
    Ok(())
}

/// Blocks per miner, largest first (ties by id).
pub fn tally_miners(blocks: &[BlockRow]) -> Vec<(String, u64)> {
    let mut tally: BTreeMap<&str, u64> = BTreeMap::new();
    for b in blocks {
        *tally.entry(&b.miner_id).or_default() += 1;
    }
    let mut miners: Vec<_> = tally.into_iter().map(|(id, c)| (id.to_string(), c)).collect();
    miners.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    miners
}

fn load_counts(path: &std::path::Path, zero_miners: usize) -> Result<BlockCounts, CliError> {
    let blocks = read_blocks(path)?;
    let counts = tally_miners(&blocks).into_iter().map(|(_, c)| c).collect();
    Ok(add_zero_miners(&BlockCounts::new(counts)?, zero_miners))
}

/// A model fitted to block counts.
#[derive(Debug, Serialize)]
pub struct FitDocument {
    pub family: &'static str,
    pub model: HashRateModel,
    pub parameters: Option<NullFamily>,
    pub gamma: Option<f64>,
    pub moments: MomentPair,
    pub n_miners: usize,
    pub zero_miners: usize,
    pub blocks: u64,
    pub lambda_total: f64,
    pub hhi: f64,
    pub notes: Vec<String>,
}

pub fn fit_counts(
    counts: &BlockCounts,
    lambda_total: f64,
    zero_miners: usize,
    family: FitFamily,
) -> Result<FitDocument, CliError> {
    let moments = fit_moments(counts, lambda_total)?;
    let mut notes = Vec::new();
    let mut parameters = None;
    let mut gamma = None;
    let model = match family {
        FitFamily::Exp | FitFamily::Lognormal | FitFamily::Tpl => {
            let kind = family.null_kind().expect("parametric family");
            let fit = fit_family(moments, kind)?;
            notes.extend(fit.notes);
            parameters = Some(fit.family);
            HashRateModel::IidNull {
                family: fit.family,
                n: counts.len(),
            }
        }
        FitFamily::SemiIid => {
            gamma = Some(counts.gamma(lambda_total)?);
            HashRateModel::semi_empirical_iid(counts.clone(), lambda_total)?
        }
        FitFamily::SemiInid => {
            gamma = Some(counts.gamma(lambda_total)?);
            HashRateModel::semi_empirical_inid(counts.clone(), lambda_total)?
        }
        FitFamily::Empirical => {
            let est = estimate_hash_rates(counts, lambda_total)?;
            if est.dropped > 0 {
                notes.push(format!("{} miners without blocks dropped", est.dropped));
            }
            HashRateModel::Fixed {
                lambdas: est.miner_set()?,
            }
        }
    };
    if moments.is_degenerate() {
        notes.push("all miners have equal counts (s = 0)".into());
    }
    Ok(FitDocument {
        family: family.name(),
        model,
        parameters,
        gamma,
        moments,
        n_miners: counts.len(),
        zero_miners,
        blocks: counts.total(),
        lambda_total,
        hhi: hhi(&counts.shares())?,
        notes,
    })
}

pub fn fit(a: FitArgs) -> Result<(), CliError> {
    let CountsArgs { blocks, lambda, zero_miners } = a.counts;
    let counts = load_counts(&blocks, zero_miners)?;
    print_json(&fit_counts(&counts, lambda, zero_miners, a.family)?)
}

fn resolve_model(a: &ModelArgs) -> Result<HashRateModel, CliError> {
    if let Some(given) = &a.model {
        let text = if given.trim_start().starts_with('{') {
            given.clone()
        } else {
            fs::read_to_string(given).map_err(|e| CliError::Input(format!("{given}: {e}")))?
        };
        let invalid = |e: serde_json::Error| CliError::Input(format!("invalid model JSON: {e}"));
        let mut value: serde_json::Value = serde_json::from_str(&text).map_err(invalid)?;
        // Accept a whole `fit` document as well as a bare model.
        if let Some(inner) = value.get_mut("model") {
            value = inner.take();
        }
        let model: HashRateModel = serde_json::from_value(value).map_err(invalid)?;
        model.validate()?;
        return Ok(model);
    }
    let (Some(blocks), Some(lambda)) = (&a.blocks, a.lambda) else {
        return Err(CliError::Input("either --model or --blocks with --lambda is required".into()));
    };
    let counts = load_counts(blocks, a.zero_miners)?;
    Ok(fit_counts(&counts, lambda, a.zero_miners, a.family)?.model)
}

pub fn forkrate(a: ForkrateArgs) -> Result<(), CliError> {
    let model = resolve_model(&a.model)?;
    let cfg = a.quad.config()?;
    let method: MethodChoice = a.method.into();
    let mut out = String::from("delta0,C,error_estimate,method\n");
    for &d in &a.delta0 {
        let r = fork_rate(&model, d, method, &cfg)?;
        let _ = writeln!(out, "{d:?},{:?},{:?},{}", r.value, r.error_estimate, r.method);
    }
    print!("{out}");
    Ok(())
}

#[derive(Debug, Serialize)]
struct AnalyticEcho {
    value: f64,
    method: String,
    error_estimate: f64,
}

#[derive(Debug, Serialize)]
struct SimulateDocument {
    model: &'static str,
    miners: usize,
    delta0: f64,
    rounds: u64,
    seed: u64,
    resampling: Resampling,
    n_fork: u64,
    fork_rate: f64,
    stderr: f64,
    mean_min_time: f64,
    analytic: Option<AnalyticEcho>,
    z_score: Option<f64>,
}

fn model_name(model: &HashRateModel) -> &'static str {
    match model {
        HashRateModel::Fixed { .. } => "fixed",
        HashRateModel::IidNull { .. } => "iid_null",
        HashRateModel::InidNull { .. } => "inid_null",
        HashRateModel::SemiEmpiricalIid { .. } => "semi_empirical_iid",
        HashRateModel::SemiEmpiricalInid { .. } => "semi_empirical_inid",
    }
}

pub fn simulate(a: SimulateArgs) -> Result<(), CliError> {
    let model = resolve_model(&a.model)?;
    let cfg = a.quad.config()?;
    let sim = SimConfig {
        model: model.clone(),
        delta0: a.delta0,
        rounds: a.rounds,
        seed: a.seed,
        threads: a.threads,
        resampling: if a.per_run { Resampling::PerRun } else { Resampling::PerRound },
    };
    let out = simulate_fork_rate(&sim)?;
    // A single per-run draw has no analytic counterpart.
    let analytic = if a.per_run {
        None
    } else {
        Some(fork_rate(&model, a.delta0, MethodChoice::Auto, &cfg)?)
    };
    print_json(&SimulateDocument {
        model: model_name(&model),
        miners: model.miner_count(),
        delta0: out.delta0,
        rounds: out.rounds,
        seed: a.seed,
        resampling: sim.resampling,
        n_fork: out.n_fork,
        fork_rate: out.fork_rate,
        stderr: out.stderr,
        mean_min_time: out.mean_min_time,
        z_score: analytic.as_ref().map(|r| out.z_score(r.value)).filter(|z| z.is_finite()),
        analytic: analytic.map(|r| AnalyticEcho {
            value: r.value,
            method: r.method.to_string(),
            error_estimate: r.error_estimate,
        }),
    })
}

#[derive(Debug, Serialize)]
struct ImpliedDocument {
    target: &'static str,
    value: f64,
    valid: bool,
}

pub fn implied(a: ImpliedArgs) -> Result<(), CliError> {
    let (target, r) = match a.target {
        ImpliedTarget::Delta { forkrate, lambda, hhi } => ("delta0", implied_delta0(forkrate, lambda, hhi)?),
        ImpliedTarget::Hhi { forkrate, lambda, delta0 } => ("hhi", implied_hhi(forkrate, lambda, delta0)?),
    };
    print_json(&ImpliedDocument {
        target,
        value: r.value,
        valid: r.valid,
    })
}

pub fn band(a: BandArgs) -> Result<(), CliError> {
    let &[lo, hi] = a.percentiles.as_slice() else {
        return Err(CliError::Input(format!(
            "--percentiles needs exactly two values, got {}",
            a.percentiles.len()
        )));
    };
    let counts = load_counts(&a.counts.blocks, a.counts.zero_miners)?;
    let bc = BandConfig {
        family: a.family.into(),
        delta0_grid: a.delta0_grid,
        n_samples: a.samples,
        percentiles: (lo, hi),
        seed: a.seed,
        quadrature: a.quad.config()?,
        threads: a.threads,
    };
    let band = confidence_band(&counts, a.counts.lambda, &bc)?;
    let mut out = String::from("delta0,lower,point,upper\n");
    for j in 0..band.delta0_grid.len() {
        let _ = writeln!(
            out,
            "{:?},{:?},{:?},{:?}",
            band.delta0_grid[j], band.lower[j], band.point[j], band.upper[j]
        );
    }
    print!("{out}");
    Ok(())
}

