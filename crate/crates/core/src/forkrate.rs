//! Analytic fork rates.
//!
//! `C(Δ₀)` is the probability that the two fastest miners finish less than
//! `Δ₀` seconds apart. For known hash rates it has a closed form; for random
//! hash rates it is an integral over an auxiliary variable `x` that replaces
//! `1/Σλ`:
//!
//! ```text
//! C(Δ₀) = 1 − ∫₀^∞ Σᵢ Wᵢ(x) Π_{j≠i} Lⱼ(Δ₀+x) dx
//! ```
//!
//! The same integral at `Δ₀ = 0` equals one, so every routine here integrates
//! the difference
//!
//! ```text
//! C(Δ₀) = ∫₀^∞ Σᵢ Wᵢ(x) Π_{j≠i} Lⱼ(x) · [1 − Π_{j≠i} Lⱼ(Δ₀+x)/Lⱼ(x)] dx
//! ```
//!
//! whose integrand is non-negative and small, so fork rates of order 1e-5
//! keep their relative precision.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{characteristic_time, BlockCounts, ForkRateResult, HashRateModel, Method, MinerSet};
use crate::quadrature::{
    integrate_semi_infinite_scaled, FamilyLaw, HashRateLaw, Integral, NullFamily, PointMass, Posterior,
    PosteriorMixture, QuadratureConfig,
};

/// Which evaluation route [`fork_rate`] should take.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodChoice {
    /// Closed form where one exists, otherwise quadrature.
    Auto,
    /// Generic Laplace-transform quadrature for every model.
    Quadrature,
    /// First-order approximation `Δ₀Λ(1−HHI)`; fixed hash rates only.
    Taylor,
    /// Exact formula for fixed hash rates.
    Conditional,
}

impl FromStr for MethodChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(MethodChoice::Auto),
            "quadrature" => Ok(MethodChoice::Quadrature),
            "taylor" => Ok(MethodChoice::Taylor),
            "conditional" => Ok(MethodChoice::Conditional),
            other => Err(Error::param(format!("unknown method `{other}`"))),
        }
    }
}

impl fmt::Display for MethodChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MethodChoice::Auto => "auto",
            MethodChoice::Quadrature => "quadrature",
            MethodChoice::Taylor => "taylor",
            MethodChoice::Conditional => "conditional",
        })
    }
}

/// An implied delay (seconds) or implied HHI.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImpliedResult {
    pub value: f64,
    pub valid: bool,
}

fn check_delta0(delta0: f64) -> Result<()> {
    if delta0 >= 0.0 && delta0.is_finite() {
        Ok(())
    } else {
        Err(Error::param(format!("delta0 must be finite and >= 0, got {delta0}")))
    }
}

fn check_rate(lambda_total: f64) -> Result<()> {
    if lambda_total > 0.0 && lambda_total.is_finite() {
        Ok(())
    } else {
        Err(Error::param(format!("total hash rate must be > 0, got {lambda_total}")))
    }
}

/// Herfindahl–Hirschman index `Σ sᵢ²` of market shares.
pub fn hhi(shares: &[f64]) -> Result<f64> {
    if shares.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::param("shares must be non-negative"));
    }
    let sum: f64 = shares.iter().sum();
    if shares.is_empty() || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::ShareSumViolation { sum });
    }
    Ok(shares.iter().map(|s| s * s).sum())
}

/// Exact fork rate for known hash rates:
/// `C = Σᵢ (λᵢ/Λ)(1 − e^{−Δ₀ Σ_{j≠i} λⱼ})`.
pub fn conditional_fork_rate(miners: &MinerSet, delta0: f64) -> Result<ForkRateResult> {
    check_delta0(delta0)?;
    let total = miners.total();
    let value: f64 = miners
        .lambdas()
        .iter()
        .zip(miners.others_totals())
        .map(|(l, others)| (l / total) * -(-delta0 * others).exp_m1())
        .sum();
    Ok(ForkRateResult {
        value: value.clamp(0.0, 1.0),
        method: Method::Conditional,
        error_estimate: 4.0 * f64::EPSILON * miners.len() as f64 * value,
        delta0,
        tau: characteristic_time(delta0, total),
        inputs: format!("fixed hash rates, N={}, Λ={total}", miners.len()),
    })
}

/// Density of the gap between the two fastest miners,
/// `Σᵢ (λᵢ/Λ) (Λ−λᵢ) e^{−(Λ−λᵢ)Δ}`; equals `Λ(1−HHI)` at `Δ = 0`.
pub fn pdf_delta_conditional(miners: &MinerSet, delta: f64) -> f64 {
    let total = miners.total();
    miners
        .lambdas()
        .iter()
        .zip(miners.others_totals())
        .map(|(l, others)| (l / total) * others * (-others * delta).exp())
        .sum()
}

/// First-order approximation `Δ₀·Λ·(1−HHI)`, clamped to `[0, 1]`.
pub fn taylor_fork_rate(lambda_total: f64, hhi: f64, delta0: f64) -> Result<ForkRateResult> {
    check_delta0(delta0)?;
    check_rate(lambda_total)?;
    if !(hhi > 0.0 && hhi <= 1.0) {
        return Err(Error::param(format!("HHI must lie in (0, 1], got {hhi}")));
    }
    let sensitivity = lambda_total * (1.0 - hhi);
    let value = delta0 * sensitivity;
    let tau = characteristic_time(delta0, lambda_total);
    Ok(ForkRateResult {
        value: value.clamp(0.0, 1.0),
        method: Method::Taylor,
        // Second-order remainder is at most τ/2 of the linear term.
        error_estimate: 0.5 * tau * value,
        delta0,
        tau,
        inputs: format!("Λ={lambda_total}, HHI={hhi}"),
    })
}

/// Checks a quadrature-derived fork rate against `[0, 1]`: small excursions
/// are clamped, larger ones mean the integral is wrong.
fn finalize(integral: Integral, cfg: &QuadratureConfig) -> Result<(f64, f64)> {
    let slack = 10.0 * cfg.rel_tol;
    let v = integral.value;
    if v < -slack || v > 1.0 + slack || !v.is_finite() {
        return Err(Error::NonConvergent {
            value: v,
            error: integral.error,
            subdivisions: cfg.max_subdivisions,
        });
    }
    Ok((v.clamp(0.0, 1.0), integral.error))
}

/// Fork rate for independent miners given as `(law, multiplicity)` groups.
///
/// Returns the fork probability and the absolute quadrature error.
pub fn fork_rate_grouped<L: HashRateLaw>(
    groups: &[(L, usize)],
    delta0: f64,
    cfg: &QuadratureConfig,
) -> Result<(f64, f64)> {
    check_delta0(delta0)?;
    let miners: usize = groups.iter().map(|(_, m)| m).sum();
    if miners < 2 {
        return Err(Error::InvalidModel(format!("need at least 2 miners, got {miners}")));
    }
    if delta0 == 0.0 {
        return Ok((0.0, 0.0));
    }
    let expected_total: f64 = groups.iter().map(|(l, m)| l.mean() * *m as f64).sum();
    if !(expected_total > 0.0 && expected_total.is_finite()) {
        return Err(Error::InvalidModel("expected total hash rate must be positive".into()));
    }

    let failure = std::cell::Cell::new(None);
    let mut parts = Vec::with_capacity(groups.len());
    let integrand = |x: f64| -> f64 {
        parts.clear();
        let mut sum_ln_l = 0.0;
        let mut sum_ratio = 0.0;
        for (law, m) in groups {
            let eval = (|| -> Result<(f64, f64, f64)> {
                Ok((law.ln_laplace(x)?, law.ln_laplace_weighted(x)?, law.ln_laplace_ratio(x, delta0)?))
            })();
            match eval {
                Ok((ln_l, ln_w, ratio)) => {
                    let m = *m as f64;
                    sum_ln_l += m * ln_l;
                    sum_ratio += m * ratio;
                    parts.push((ln_l, ln_w, ratio, m));
                }
                Err(e) => {
                    failure.set(Some(e.to_string()));
                    return f64::NAN;
                }
            }
        }
        parts
            .iter()
            .map(|&(ln_l, ln_w, ratio, m)| {
                m * (ln_w + sum_ln_l - ln_l).exp() * -(sum_ratio - ratio).exp_m1()
            })
            .sum()
    };
    // The closure mutably borrows `parts`; wrap it so the integrator sees Fn.
    let cell = std::cell::RefCell::new(integrand);
    let result = integrate_semi_infinite_scaled(|x| (cell.borrow_mut())(x), 1.0 / expected_total, cfg);
    if let Some(msg) = failure.take() {
        return Err(Error::InvalidModel(format!("transform evaluation failed: {msg}")));
    }
    finalize(result?, cfg)
}

/// Fork rate for independent miners, one law each.
pub fn fork_rate_independent<L: HashRateLaw + Clone>(
    laws: &[L],
    delta0: f64,
    cfg: &QuadratureConfig,
) -> Result<(f64, f64)> {
    let groups: Vec<(L, usize)> = laws.iter().cloned().map(|l| (l, 1)).collect();
    fork_rate_grouped(&groups, delta0, cfg)
}

fn group_equal<T: PartialEq + Clone>(items: impl IntoIterator<Item = T>) -> Vec<(T, usize)> {
    let mut groups: Vec<(T, usize)> = Vec::new();
    for item in items {
        match groups.iter_mut().find(|(g, _)| *g == item) {
            Some((_, m)) => *m += 1,
            None => groups.push((item, 1)),
        }
    }
    groups
}

/// i.i.d. fork rate from the reduced closed-form integrands (exponential and
/// truncated power law), or nested quadrature (log-normal).
pub fn fork_rate_iid(family: &NullFamily, n: usize, delta0: f64, cfg: &QuadratureConfig) -> Result<ForkRateResult> {
    family.validate()?;
    cfg.validate()?;
    check_delta0(delta0)?;
    if n < 2 {
        return Err(Error::InvalidModel(format!("need n >= 2 miners, got {n}")));
    }
    let (shape, scale) = match *family {
        NullFamily::Exponential { rate } => (1.0, rate),
        NullFamily::TruncatedPowerLaw { alpha, beta } => (1.0 - alpha, beta),
        NullFamily::LogNormal { .. } => return fork_rate_iid_quadrature(family, n, delta0, cfg),
    };
    let inputs = format!("i.i.d. {family}, N={n}");
    let tau = characteristic_time(delta0, n as f64 * family.mean());
    if delta0 == 0.0 {
        return Ok(ForkRateResult {
            value: 0.0,
            method: Method::ClosedForm,
            error_estimate: 0.0,
            delta0,
            tau,
            inputs,
        });
    }
    // N k β^{Nk} / ((β+x)^{k+1} (β+x)^{(N−1)k}) · [1 − ((β+x)/(Δ₀+β+x))^{(N−1)k}]
    let nf = n as f64;
    let lead = nf * shape / scale;
    let power = nf * shape + 1.0;
    let tail = (nf - 1.0) * shape;
    let integrand = |x: f64| {
        let base = lead * (-power * (x / scale).ln_1p()).exp();
        base * -(-tail * (delta0 / (scale + x)).ln_1p()).exp_m1()
    };
    let integral = integrate_semi_infinite_scaled(integrand, 1.0 / (nf * family.mean()), cfg)?;
    let (value, error_estimate) = finalize(integral, cfg)?;
    Ok(ForkRateResult {
        value,
        method: Method::ClosedForm,
        error_estimate,
        delta0,
        tau,
        inputs,
    })
}

/// i.i.d. fork rate through the generic Laplace-transform integrand, for any
/// family.
pub fn fork_rate_iid_quadrature(
    family: &NullFamily,
    n: usize,
    delta0: f64,
    cfg: &QuadratureConfig,
) -> Result<ForkRateResult> {
    let law = FamilyLaw::new(*family, *cfg)?;
    let (value, error_estimate) = fork_rate_grouped(&[(law, n)], delta0, cfg)?;
    Ok(ForkRateResult {
        value,
        method: Method::Quadrature,
        error_estimate,
        delta0,
        tau: characteristic_time(delta0, n as f64 * family.mean()),
        inputs: format!("i.i.d. {family}, N={n}"),
    })
}

/// Independent, non-identically distributed parametric miners.
pub fn fork_rate_inid(families: &[NullFamily], delta0: f64, cfg: &QuadratureConfig) -> Result<ForkRateResult> {
    let laws = group_equal(families.iter().copied())
        .into_iter()
        .map(|(f, m)| Ok((FamilyLaw::new(f, *cfg)?, m)))
        .collect::<Result<Vec<_>>>()?;
    let (value, error_estimate) = fork_rate_grouped(&laws, delta0, cfg)?;
    let total: f64 = families.iter().map(NullFamily::mean).sum();
    Ok(ForkRateResult {
        value,
        method: Method::Quadrature,
        error_estimate,
        delta0,
        tau: characteristic_time(delta0, total),
        inputs: format!("independent parametric miners, N={}", families.len()),
    })
}

/// Fork rate for fixed hash rates evaluated through the generic integrand
/// with point-mass transforms. Agrees with [`conditional_fork_rate`].
pub fn fork_rate_point_masses(miners: &MinerSet, delta0: f64, cfg: &QuadratureConfig) -> Result<ForkRateResult> {
    let laws: Vec<_> = group_equal(miners.lambdas().iter().map(|&l| PointMass(l)));
    let (value, error_estimate) = fork_rate_grouped(&laws, delta0, cfg)?;
    Ok(ForkRateResult {
        value,
        method: Method::Quadrature,
        error_estimate,
        delta0,
        tau: characteristic_time(delta0, miners.total()),
        inputs: format!("fixed hash rates via point-mass transforms, N={}", miners.len()),
    })
}

/// Semi-empirical fork rate from block counts.
///
/// The i.i.d. variant draws every miner from the equal-weight mixture of
/// posteriors; the non-identical variant gives each miner its own posterior
/// and composes their transforms.
pub fn fork_rate_semi_empirical(model: &HashRateModel, delta0: f64, cfg: &QuadratureConfig) -> Result<ForkRateResult> {
    model.validate()?;
    let tau = characteristic_time(delta0, model.expected_total_rate());
    let (value, error_estimate, inputs) = match model {
        HashRateModel::SemiEmpiricalIid { counts, gamma } => {
            let mixture = PosteriorMixture::new(counts.as_f64(), *gamma)?;
            let (v, e) = fork_rate_grouped(&[(mixture, counts.len())], delta0, cfg)?;
            (v, e, format!("semi-empirical i.i.d., N={}, γ={gamma}", counts.len()))
        }
        HashRateModel::SemiEmpiricalInid { counts, gamma } => {
            let laws = posterior_groups(counts, *gamma)?;
            let (v, e) = fork_rate_grouped(&laws, delta0, cfg)?;
            (v, e, format!("semi-empirical independent, N={}, γ={gamma}", counts.len()))
        }
        _ => {
            return Err(Error::InvalidModel(
                "semi-empirical fork rate needs a semi-empirical model".into(),
            ))
        }
    };
    Ok(ForkRateResult {
        value,
        method: Method::SemiEmpirical,
        error_estimate,
        delta0,
        tau,
        inputs,
    })
}

fn posterior_groups(counts: &BlockCounts, gamma: f64) -> Result<Vec<(Posterior, usize)>> {
    group_equal(counts.counts().iter().copied())
        .into_iter()
        .map(|(b, m)| Ok((Posterior::new(b as f64, gamma)?, m)))
        .collect()
}

/// Evaluates `C(Δ₀)` for any model with the requested route.
pub fn fork_rate(
    model: &HashRateModel,
    delta0: f64,
    choice: MethodChoice,
    cfg: &QuadratureConfig,
) -> Result<ForkRateResult> {
    model.validate()?;
    match (model, choice) {
        (HashRateModel::Fixed { lambdas }, MethodChoice::Auto | MethodChoice::Conditional) => {
            conditional_fork_rate(lambdas, delta0)
        }
        (HashRateModel::Fixed { lambdas }, MethodChoice::Taylor) => {
            taylor_fork_rate(lambdas.total(), lambdas.hhi(), delta0)
        }
        (HashRateModel::Fixed { lambdas }, MethodChoice::Quadrature) => {
            fork_rate_point_masses(lambdas, delta0, cfg)
        }
        (_, MethodChoice::Taylor | MethodChoice::Conditional) => Err(Error::InvalidModel(format!(
            "method `{choice}` needs fixed hash rates"
        ))),
        (HashRateModel::IidNull { family, n }, MethodChoice::Auto) => fork_rate_iid(family, *n, delta0, cfg),
        (HashRateModel::IidNull { family, n }, MethodChoice::Quadrature) => {
            fork_rate_iid_quadrature(family, *n, delta0, cfg)
        }
        (HashRateModel::InidNull { families }, _) => fork_rate_inid(families, delta0, cfg),
        (HashRateModel::SemiEmpiricalIid { .. } | HashRateModel::SemiEmpiricalInid { .. }, _) => {
            fork_rate_semi_empirical(model, delta0, cfg)
        }
    }
}

/// Delay that makes the first-order formula reproduce an observed fork rate:
/// `C / (Λ(1−HHI))`.
pub fn implied_delta0(fork_rate: f64, lambda_total: f64, hhi: f64) -> Result<ImpliedResult> {
    check_rate(lambda_total)?;
    if !(0.0..1.0).contains(&fork_rate) {
        return Err(Error::param(format!("fork rate must lie in [0, 1), got {fork_rate}")));
    }
    if hhi == 1.0 {
        return Err(Error::DegenerateHhi);
    }
    if !(hhi > 0.0 && hhi < 1.0) {
        return Err(Error::param(format!("HHI must lie in (0, 1), got {hhi}")));
    }
    let value = fork_rate / (lambda_total * (1.0 - hhi));
    Ok(ImpliedResult {
        value,
        valid: value >= 0.0,
    })
}

/// Concentration that makes the first-order formula reproduce an observed
/// fork rate: `1 − C/(ΛΔ₀)`. Values outside `[0, 1]` are returned with
/// `valid = false`; a negative value means `Δ₀` is too large.
pub fn implied_hhi(fork_rate: f64, lambda_total: f64, delta0: f64) -> Result<ImpliedResult> {
    check_rate(lambda_total)?;
    if !(delta0 > 0.0 && delta0.is_finite()) {
        return Err(Error::param(format!("delta0 must be > 0, got {delta0}")));
    }
    if !(0.0..=1.0).contains(&fork_rate) {
        return Err(Error::param(format!("fork rate must lie in [0, 1], got {fork_rate}")));
    }
    let value = 1.0 - fork_rate / (lambda_total * delta0);
    Ok(ImpliedResult {
        value,
        valid: (0.0..=1.0).contains(&value),
    })
}
