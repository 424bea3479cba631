//! Laplace transforms `L(s) = E[e^{−sλ}]` and weighted transforms
//! `W(s) = E[λ e^{−sλ}] = −L'(s)` of per-miner hash-rate laws.
//!
//! The fork-rate integrals only ever need these two functions plus the ratio
//! `L(s+Δ)/L(s)`, so each law exposes them in log space. The ratio gets its
//! own method because `ln L(s+Δ) − ln L(s)` cancels badly when `Δ` is small
//! compared with the scale of `L`.

use std::f64::consts::PI;

use crate::error::{Error, Result};

use super::{integrate_semi_infinite, NullFamily, QuadratureConfig};

/// Law of one miner's hash rate, seen through its Laplace transforms.
pub trait HashRateLaw: Sync {
    /// `ln E[e^{−sλ}]`
    fn ln_laplace(&self, s: f64) -> Result<f64>;
    /// `ln E[λ e^{−sλ}]`
    fn ln_laplace_weighted(&self, s: f64) -> Result<f64>;
    /// `ln (L(s+Δ) / L(s))`, always ≤ 0.
    fn ln_laplace_ratio(&self, s: f64, delta: f64) -> Result<f64>;
    /// `E[λ]`
    fn mean(&self) -> f64;
}

/// A miner whose hash rate is known exactly.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointMass(pub f64);

impl HashRateLaw for PointMass {
    fn ln_laplace(&self, s: f64) -> Result<f64> {
        Ok(-s * self.0)
    }

    fn ln_laplace_weighted(&self, s: f64) -> Result<f64> {
        Ok(self.0.ln() - s * self.0)
    }

    fn ln_laplace_ratio(&self, _s: f64, delta: f64) -> Result<f64> {
        Ok(-delta * self.0)
    }

    fn mean(&self) -> f64 {
        self.0
    }
}

/// A parametric family paired with the quadrature settings its numeric
/// transforms (log-normal only) should use.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FamilyLaw {
    pub family: NullFamily,
    pub cfg: QuadratureConfig,
}

impl FamilyLaw {
    pub fn new(family: NullFamily, cfg: QuadratureConfig) -> Result<Self> {
        family.validate()?;
        cfg.validate()?;
        Ok(FamilyLaw { family, cfg })
    }

    fn inner_cfg(&self) -> QuadratureConfig {
        // The outer fork-rate integral differences these values, so they are
        // computed two orders tighter than the caller asked for.
        QuadratureConfig {
            rel_tol: (self.cfg.rel_tol * 1e-2).max(1e-14),
            abs_tol: 0.0,
            max_subdivisions: self.cfg.max_subdivisions,
        }
    }
}

impl HashRateLaw for FamilyLaw {
    fn ln_laplace(&self, s: f64) -> Result<f64> {
        match self.family {
            NullFamily::Exponential { rate } => Ok(-(s / rate).ln_1p()),
            NullFamily::TruncatedPowerLaw { alpha, beta } => Ok(-(1.0 - alpha) * (s / beta).ln_1p()),
            NullFamily::LogNormal { mu, sigma } => {
                Ok(lognormal_laplace(mu, sigma, s, &self.inner_cfg())?.ln())
            }
        }
    }

    fn ln_laplace_weighted(&self, s: f64) -> Result<f64> {
        match self.family {
            NullFamily::Exponential { rate } => Ok(-rate.ln() - 2.0 * (s / rate).ln_1p()),
            NullFamily::TruncatedPowerLaw { alpha, beta } => {
                let shape = 1.0 - alpha;
                Ok((shape / beta).ln() - (shape + 1.0) * (s / beta).ln_1p())
            }
            NullFamily::LogNormal { mu, sigma } => {
                // λ·φ-weighted log-normal is the mean times LN(μ+σ², σ).
                let shifted = lognormal_laplace(mu + sigma * sigma, sigma, s, &self.inner_cfg())?;
                Ok(mu + 0.5 * sigma * sigma + shifted.ln())
            }
        }
    }

    fn ln_laplace_ratio(&self, s: f64, delta: f64) -> Result<f64> {
        match self.family {
            NullFamily::Exponential { rate } => Ok(-(delta / (rate + s)).ln_1p()),
            NullFamily::TruncatedPowerLaw { alpha, beta } => {
                Ok(-(1.0 - alpha) * (delta / (beta + s)).ln_1p())
            }
            NullFamily::LogNormal { mu, sigma } => {
                if delta == 0.0 {
                    return Ok(0.0);
                }
                let cfg = self.inner_cfg();
                let base = lognormal_laplace(mu, sigma, s, &cfg)?;
                let drop = lognormal_integral(mu, sigma, &cfg, |lambda| {
                    (-s * lambda).exp() * -(-delta * lambda).exp_m1()
                })?;
                Ok((-drop / base).ln_1p())
            }
        }
    }

    fn mean(&self) -> f64 {
        self.family.mean()
    }
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// `∫ φ(z) g(e^{μ+σz}) dz` over the real line.
fn lognormal_integral<G: Fn(f64) -> f64>(
    mu: f64,
    sigma: f64,
    cfg: &QuadratureConfig,
    g: G,
) -> Result<f64> {
    let h = |z: f64| {
        let w = std_normal_pdf(z);
        if w == 0.0 {
            0.0
        } else {
            w * g((mu + sigma * z).exp())
        }
    };
    Ok(integrate_semi_infinite(|y| h(y) + h(-y), cfg)?.value)
}

fn lognormal_laplace(mu: f64, sigma: f64, s: f64, cfg: &QuadratureConfig) -> Result<f64> {
    if s == 0.0 {
        return Ok(1.0);
    }
    lognormal_integral(mu, sigma, cfg, |lambda| (-s * lambda).exp())
}

fn check_s(s: f64) -> Result<()> {
    if s >= 0.0 && s.is_finite() {
        Ok(())
    } else {
        Err(Error::param(format!("transform argument must be finite and >= 0, got {s}")))
    }
}

/// `∫₀^∞ p(λ) e^{−sλ} dλ` for a parametric family.
pub fn laplace(family: &NullFamily, s: f64, cfg: &QuadratureConfig) -> Result<f64> {
    check_s(s)?;
    let law = FamilyLaw::new(*family, *cfg)?;
    match *family {
        NullFamily::Exponential { rate } => Ok(rate / (rate + s)),
        NullFamily::TruncatedPowerLaw { alpha, beta } => Ok((beta / (beta + s)).powf(1.0 - alpha)),
        NullFamily::LogNormal { .. } => Ok(law.ln_laplace(s)?.exp()),
    }
}

/// `∫₀^∞ λ p(λ) e^{−sλ} dλ` for a parametric family.
pub fn laplace_weighted(family: &NullFamily, s: f64, cfg: &QuadratureConfig) -> Result<f64> {
    check_s(s)?;
    let law = FamilyLaw::new(*family, *cfg)?;
    match *family {
        NullFamily::Exponential { rate } => Ok(rate / ((rate + s) * (rate + s))),
        NullFamily::TruncatedPowerLaw { alpha, beta } => {
            let shape = 1.0 - alpha;
            Ok(shape * beta.powf(shape) / (beta + s).powf(shape + 1.0))
        }
        NullFamily::LogNormal { .. } => Ok(law.ln_laplace_weighted(s)?.exp()),
    }
}

/// Posterior density of a hash rate given `blocks` mined, with `gamma = B/Λ`:
/// `exp(−(b − γλ)² / (2γλ)) / sqrt(2πλ/γ)`.
pub fn posterior_density(blocks: f64, gamma: f64, lambda: f64) -> f64 {
    if !(lambda > 0.0) {
        return 0.0;
    }
    let d = blocks - gamma * lambda;
    (-d * d / (2.0 * gamma * lambda)).exp() / (2.0 * PI * lambda / gamma).sqrt()
}

/// Per-miner Bayesian posterior over λ given its block count.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Posterior {
    pub blocks: f64,
    pub gamma: f64,
}

impl Posterior {
    pub fn new(blocks: f64, gamma: f64) -> Result<Self> {
        if !(blocks >= 0.0 && blocks.is_finite()) {
            return Err(Error::param(format!("block count must be >= 0, got {blocks}")));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::param(format!("gamma must be > 0, got {gamma}")));
        }
        Ok(Posterior { blocks, gamma })
    }

    // (u − 1, ln u) with u = sqrt(1 + 2s/γ), both free of cancellation.
    fn u_parts(&self, s: f64) -> (f64, f64, f64) {
        let q = 2.0 * s / self.gamma;
        let u = (1.0 + q).sqrt();
        (u, q / (u + 1.0), 0.5 * q.ln_1p())
    }
}

impl HashRateLaw for Posterior {
    fn ln_laplace(&self, s: f64) -> Result<f64> {
        let (_, u_m1, ln_u) = self.u_parts(s);
        Ok(-self.blocks * u_m1 - ln_u)
    }

    fn ln_laplace_weighted(&self, s: f64) -> Result<f64> {
        let (u, u_m1, ln_u) = self.u_parts(s);
        Ok((self.blocks * u).ln_1p() - self.blocks * u_m1 - self.gamma.ln() - 3.0 * ln_u)
    }

    fn ln_laplace_ratio(&self, s: f64, delta: f64) -> Result<f64> {
        let (u, _, _) = self.u_parts(s);
        let (u2, _, _) = self.u_parts(s + delta);
        let du = (2.0 * delta / self.gamma) / (u + u2);
        let dln = 0.5 * ((2.0 * delta / self.gamma) / (1.0 + 2.0 * s / self.gamma)).ln_1p();
        Ok(-self.blocks * du - dln)
    }

    fn mean(&self) -> f64 {
        (1.0 + self.blocks) / self.gamma
    }
}

/// `e^{b(1−u)}/u` with `u = sqrt(1 + 2s/γ)`.
pub fn posterior_laplace(blocks: f64, gamma: f64, s: f64) -> f64 {
    Posterior { blocks, gamma }.ln_laplace(s).map(f64::exp).unwrap_or(f64::NAN)
}

/// `(1 + b·u) e^{b(1−u)} / (γ u³)`, the derivative `−d/ds` of
/// [`posterior_laplace`].
pub fn posterior_laplace_weighted(blocks: f64, gamma: f64, s: f64) -> f64 {
    Posterior { blocks, gamma }
        .ln_laplace_weighted(s)
        .map(f64::exp)
        .unwrap_or(f64::NAN)
}

/// Equal-weight mixture of per-miner posteriors: the i.i.d. semi-empirical
/// marginal law.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorMixture {
    blocks: Vec<f64>,
    gamma: f64,
}

impl PosteriorMixture {
    pub fn new(blocks: Vec<f64>, gamma: f64) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::param("posterior mixture needs at least one component"));
        }
        for &b in &blocks {
            Posterior::new(b, gamma)?;
        }
        Ok(PosteriorMixture { blocks, gamma })
    }

    pub fn components(&self) -> impl Iterator<Item = Posterior> + '_ {
        self.blocks.iter().map(move |&blocks| Posterior {
            blocks,
            gamma: self.gamma,
        })
    }

    fn u_parts(&self, s: f64) -> (f64, f64, f64) {
        Posterior {
            blocks: 0.0,
            gamma: self.gamma,
        }
        .u_parts(s)
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl HashRateLaw for PosteriorMixture {
    fn ln_laplace(&self, s: f64) -> Result<f64> {
        let (_, u_m1, ln_u) = self.u_parts(s);
        let n = self.blocks.len() as f64;
        Ok(log_sum_exp(self.blocks.iter().map(|b| -b * u_m1)) - ln_u - n.ln())
    }

    fn ln_laplace_weighted(&self, s: f64) -> Result<f64> {
        let (u, u_m1, ln_u) = self.u_parts(s);
        let n = self.blocks.len() as f64;
        let lse = log_sum_exp(self.blocks.iter().map(|b| (b * u).ln_1p() - b * u_m1));
        Ok(lse - self.gamma.ln() - 3.0 * ln_u - n.ln())
    }

    fn ln_laplace_ratio(&self, s: f64, delta: f64) -> Result<f64> {
        let (u, u_m1, _) = self.u_parts(s);
        let (u2, _, _) = self.u_parts(s + delta);
        let du = (2.0 * delta / self.gamma) / (u + u2);
        let dln = 0.5 * ((2.0 * delta / self.gamma) / (1.0 + 2.0 * s / self.gamma)).ln_1p();
        // Component weights at s, then the weighted mean of e^{−b·du} − 1.
        let max = self.blocks.iter().map(|b| -b * u_m1).fold(f64::NEG_INFINITY, f64::max);
        let (mut num, mut den) = (0.0, 0.0);
        for &b in &self.blocks {
            let w = (-b * u_m1 - max).exp();
            num += w * (-b * du).exp_m1();
            den += w;
        }
        Ok((num / den).ln_1p() - dln)
    }

    fn mean(&self) -> f64 {
        let n = self.blocks.len() as f64;
        self.blocks.iter().map(|b| (1.0 + b) / self.gamma).sum::<f64>() / n
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate_semi_infinite_scaled;
    use approx::assert_relative_eq;

    fn cfg() -> QuadratureConfig {
        QuadratureConfig::default()
    }

    const LN: NullFamily = NullFamily::LogNormal {
        mu: -10.708,
        sigma: 1.26864,
    };

    #[test]
    fn exponential_examples() {
        let fam = NullFamily::Exponential { rate: 2.0 };
        assert_eq!(laplace(&fam, 0.0, &cfg()).unwrap(), 1.0);
        assert_eq!(laplace(&fam, 2.0, &cfg()).unwrap(), 0.5);
        assert_eq!(laplace_weighted(&fam, 0.0, &cfg()).unwrap(), 0.5);
    }

    #[test]
    fn tpl_with_zero_alpha_is_exponential() {
        // Oracle: numeric transform of the TPL density.
        let fam = NullFamily::TruncatedPowerLaw { alpha: 0.0, beta: 2.0 };
        let numeric = integrate_semi_infinite_scaled(|x| fam.density(x) * (-2.0 * x).exp(), 0.5, &cfg())
            .unwrap()
            .value;
        assert_relative_eq!(numeric, 0.5, max_relative = 1e-9);
        assert_relative_eq!(laplace(&fam, 2.0, &cfg()).unwrap(), 0.5, max_relative = 1e-15);
    }

    #[test]
    fn tpl_weighted_mean() {
        let fam = NullFamily::TruncatedPowerLaw { alpha: 0.75, beta: 5000.0 };
        assert_relative_eq!(laplace_weighted(&fam, 0.0, &cfg()).unwrap(), 5e-5, max_relative = 1e-12);
    }

    #[test]
    fn lognormal_normalised_and_mean() {
        assert_eq!(laplace(&LN, 0.0, &cfg()).unwrap(), 1.0);
        let mean = (-10.708f64 + 0.5 * 1.26864f64 * 1.26864).exp();
        assert_relative_eq!(laplace_weighted(&LN, 0.0, &cfg()).unwrap(), mean, max_relative = 1e-12);
    }

    #[test]
    fn lognormal_matches_density_quadrature() {
        for s in [1.0, 1e3, 2e4, 1e6] {
            let direct = integrate_semi_infinite_scaled(
                |x| LN.density(x) * (-s * x).exp(),
                LN.mean(),
                &QuadratureConfig::new(1e-12, 0.0, 4000).unwrap(),
            )
            .unwrap()
            .value;
            assert_relative_eq!(laplace(&LN, s, &cfg()).unwrap(), direct, max_relative = 1e-9);
        }
    }

    #[test]
    fn lognormal_ratio_matches_difference_of_logs() {
        let law = FamilyLaw::new(LN, cfg()).unwrap();
        for (s, d) in [(10.0, 1.0), (1e4, 8.7), (1e6, 0.5)] {
            let direct = law.ln_laplace(s + d).unwrap() - law.ln_laplace(s).unwrap();
            let ratio = law.ln_laplace_ratio(s, d).unwrap();
            assert_relative_eq!(ratio, direct, max_relative = 1e-6);
        }
    }

    #[test]
    fn negative_argument_rejected() {
        let fam = NullFamily::Exponential { rate: 2.0 };
        assert!(laplace(&fam, -1.0, &cfg()).is_err());
    }

    #[test]
    fn posterior_examples() {
        assert_eq!(posterior_laplace(37.0, 3.0, 0.0), 1.0);
        assert_relative_eq!(posterior_laplace(0.0, 2.0, 1.5), 1.0 / 2.5f64.sqrt(), max_relative = 1e-15);
        assert_relative_eq!(posterior_laplace_weighted(0.0, 2.0, 0.0), 0.5, max_relative = 1e-15);
        assert_relative_eq!(posterior_laplace_weighted(100.0, 1e6, 0.0), 101.0 / 1e6, max_relative = 1e-14);
    }

    #[test]
    fn posterior_weighted_is_minus_derivative() {
        let (b, gamma) = (250.0, 1.17647e7);
        for k in -3..=3 {
            let s = 10f64.powi(k) * gamma;
            let h = 1e-6 * s;
            let fd = -(posterior_laplace(b, gamma, s + h) - posterior_laplace(b, gamma, s - h)) / (2.0 * h);
            assert_relative_eq!(posterior_laplace_weighted(b, gamma, s), fd, max_relative = 1e-6);
        }
    }

    /// For `s ≪ γ` the transform differs from one by less than an ulp, so
    /// the difference quotient is taken on its logarithm: `W = −L·(ln L)'`.
    #[test]
    fn posterior_weighted_is_minus_derivative_near_zero() {
        let (b, gamma) = (250.0, 1.17647e7);
        let p = Posterior::new(b, gamma).unwrap();
        for k in -3..=3 {
            let s = 10f64.powi(k) / gamma;
            let h = 1e-6 * s;
            let dlog = (p.ln_laplace(s + h).unwrap() - p.ln_laplace(s - h).unwrap()) / (2.0 * h);
            let fd = -posterior_laplace(b, gamma, s) * dlog;
            assert_relative_eq!(posterior_laplace_weighted(b, gamma, s), fd, max_relative = 1e-6);
        }
    }

    #[test]
    fn posterior_ratio_matches_logs() {
        let p = Posterior::new(100.0, 1e6).unwrap();
        let direct = p.ln_laplace(3.0e5).unwrap() - p.ln_laplace(2.0e5).unwrap();
        assert_relative_eq!(p.ln_laplace_ratio(2.0e5, 1.0e5).unwrap(), direct, max_relative = 1e-12);
    }

    #[test]
    fn mixture_of_identical_components_equals_component() {
        let p = Posterior::new(40.0, 2e5).unwrap();
        let mix = PosteriorMixture::new(vec![40.0; 7], 2e5).unwrap();
        for s in [0.0, 1.0, 1e3, 1e6] {
            assert_relative_eq!(mix.ln_laplace(s).unwrap(), p.ln_laplace(s).unwrap(), epsilon = 1e-13);
            assert_relative_eq!(
                mix.ln_laplace_weighted(s).unwrap(),
                p.ln_laplace_weighted(s).unwrap(),
                epsilon = 1e-13
            );
            assert_relative_eq!(
                mix.ln_laplace_ratio(s, 2.0).unwrap(),
                p.ln_laplace_ratio(s, 2.0).unwrap(),
                max_relative = 1e-12
            );
        }
        assert_relative_eq!(mix.mean(), p.mean(), max_relative = 1e-15);
    }

    #[test]
    fn point_mass_transforms() {
        let p = PointMass(0.25);
        assert_relative_eq!(p.ln_laplace(2.0).unwrap().exp(), (-0.5f64).exp());
        assert_relative_eq!(p.ln_laplace_weighted(2.0).unwrap().exp(), 0.25 * (-0.5f64).exp());
        assert_eq!(p.ln_laplace_ratio(1.0, 4.0).unwrap(), -1.0);
    }
}
