//! Hash-rate estimation from block counts, method-of-moments fitting and
//! confidence bands on fitted fork-rate curves.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forkrate::fork_rate_iid;
use crate::model::{compensated_sum, BlockCounts, MinerSet};
use crate::quadrature::{FamilyKind, NullFamily, QuadratureConfig};

/// Frequentist hash rates `bᵢΛ/B` of the miners that found at least one
/// block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HashRateEstimate {
    pub lambdas: Vec<f64>,
    /// Miners left out because they found no blocks.
    pub dropped: usize,
}

impl HashRateEstimate {
    pub fn total(&self) -> f64 {
        compensated_sum(self.lambdas.iter().copied())
    }

    /// Fails when fewer than two miners remain.
    pub fn miner_set(&self) -> Result<MinerSet> {
        MinerSet::new(self.lambdas.clone())
    }
}

pub fn estimate_hash_rates(counts: &BlockCounts, lambda_total: f64) -> Result<HashRateEstimate> {
    check_rate(lambda_total)?;
    let b = counts.total() as f64;
    let lambdas: Vec<f64> = counts
        .counts()
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| c as f64 * lambda_total / b)
        .collect();
    if lambdas.is_empty() {
        return Err(Error::AllZero);
    }
    Ok(HashRateEstimate {
        dropped: counts.len() - lambdas.len(),
        lambdas,
    })
}

fn check_rate(lambda_total: f64) -> Result<()> {
    if lambda_total > 0.0 && lambda_total.is_finite() {
        Ok(())
    } else {
        Err(Error::param(format!("total hash rate must be > 0, got {lambda_total}")))
    }
}

/// Mean and standard deviation of per-miner hash rates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentPair {
    pub m: f64,
    pub s: f64,
}

impl MomentPair {
    /// `s = 0` cannot be fitted by the two-parameter families.
    pub fn is_degenerate(&self) -> bool {
        !(self.s > 0.0)
    }
}

/// `m = Λ/N` and the sample standard deviation (divisor `N−1`) of the
/// estimated rates, zero-count miners included.
pub fn fit_moments(counts: &BlockCounts, lambda_total: f64) -> Result<MomentPair> {
    check_rate(lambda_total)?;
    let n = counts.len() as f64;
    let b = counts.total() as f64;
    let m = lambda_total / n;
    let ss = compensated_sum(counts.counts().iter().map(|&c| {
        let d = c as f64 * lambda_total / b - m;
        d * d
    }));
    Ok(MomentPair {
        m,
        s: (ss / (n - 1.0)).sqrt(),
    })
}

/// Family parameters matching `(m, s)`.
///
/// The exponential matches the mean only. The log-normal uses
/// `σ² = ln(1 + (s/m)²)` and `μ = ln m − σ²/2` so that its mean is `m`.
pub fn method_of_moments(mp: MomentPair, kind: FamilyKind) -> Result<NullFamily> {
    let MomentPair { m, s } = mp;
    if !(m > 0.0 && m.is_finite()) {
        return Err(Error::InvalidMoments(format!("mean must be > 0, got {m}")));
    }
    if kind != FamilyKind::Exponential && !(s > 0.0 && s.is_finite()) {
        return Err(Error::InvalidMoments(format!("{kind} needs s > 0, got {s}")));
    }
    let family = match kind {
        FamilyKind::Exponential => NullFamily::Exponential { rate: 1.0 / m },
        FamilyKind::LogNormal => {
            let cv = s / m;
            let sigma2 = (cv * cv).ln_1p();
            NullFamily::LogNormal {
                mu: m.ln() - 0.5 * sigma2,
                sigma: sigma2.sqrt(),
            }
        }
        FamilyKind::TruncatedPowerLaw => {
            let ratio = m / s;
            NullFamily::TruncatedPowerLaw {
                alpha: 1.0 - ratio * ratio,
                beta: m / (s * s),
            }
        }
    };
    family
        .validate()
        .map_err(|e| Error::InvalidMoments(e.to_string()))?;
    Ok(family)
}

/// A fitted family with remarks worth showing to a user.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyFit {
    pub family: NullFamily,
    pub moments: MomentPair,
    pub notes: Vec<String>,
}

pub fn fit_family(mp: MomentPair, kind: FamilyKind) -> Result<FamilyFit> {
    let family = method_of_moments(mp, kind)?;
    let mut notes = Vec::new();
    match family {
        NullFamily::Exponential { .. } => {
            let mismatch = (mp.s - mp.m).abs() / mp.m;
            notes.push(format!(
                "exponential matches the mean only; |s-m|/m = {mismatch:.6}"
            ));
        }
        NullFamily::LogNormal { .. } => {
            notes.push("log-normal mu = ln m - sigma^2/2 so that the fitted mean equals m".into());
        }
        NullFamily::TruncatedPowerLaw { alpha, .. } => {
            if alpha <= 0.0 {
                notes.push(format!("s <= m gives alpha = {alpha} <= 0 (no power-law regime)"));
            }
        }
    }
    Ok(FamilyFit {
        family,
        moments: mp,
        notes,
    })
}

/// Sampling uncertainty of block-share estimates and of `(m, s²)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorUncertainty {
    pub p_hat: Vec<f64>,
    /// `p̂(1−p̂)/B` per miner.
    pub var_p: Vec<f64>,
    /// `Λ²/N² Σ var_p`.
    pub var_m: f64,
    /// `2Λ⁴/(N(N−1)) Σ var_p²`.
    pub var_s2: f64,
}

pub fn estimator_uncertainty(counts: &BlockCounts, lambda_total: f64) -> Result<EstimatorUncertainty> {
    check_rate(lambda_total)?;
    let b = counts.total() as f64;
    let n = counts.len() as f64;
    let p_hat = counts.shares();
    let var_p: Vec<f64> = p_hat.iter().map(|p| p * (1.0 - p) / b).collect();
    let l2 = lambda_total * lambda_total;
    let var_m = l2 / (n * n) * compensated_sum(var_p.iter().copied());
    let var_s2 = 2.0 * l2 * l2 / (n * (n - 1.0)) * compensated_sum(var_p.iter().map(|v| v * v));
    Ok(EstimatorUncertainty {
        p_hat,
        var_p,
        var_m,
        var_s2,
    })
}

/// Settings for [`confidence_band`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandConfig {
    pub family: FamilyKind,
    pub delta0_grid: Vec<f64>,
    pub n_samples: usize,
    /// Lower and upper percentile, in (0, 100).
    pub percentiles: (f64, f64),
    pub seed: u64,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    /// Worker threads; 0 uses the global pool.
    #[serde(default)]
    pub threads: usize,
}

impl BandConfig {
    pub fn new(family: FamilyKind, delta0_grid: Vec<f64>, n_samples: usize, seed: u64) -> Self {
        BandConfig {
            family,
            delta0_grid,
            n_samples,
            percentiles: (5.0, 95.0),
            seed,
            quadrature: QuadratureConfig::default(),
            threads: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        self.quadrature.validate()?;
        if self.n_samples < 100 {
            return Err(Error::param(format!("need at least 100 samples, got {}", self.n_samples)));
        }
        let (lo, hi) = self.percentiles;
        if !(lo > 0.0 && lo < hi && hi < 100.0) {
            return Err(Error::param(format!("percentiles must satisfy 0 < low < high < 100, got {lo},{hi}")));
        }
        if self.delta0_grid.is_empty() {
            return Err(Error::param("delta0 grid is empty"));
        }
        if let Some(d) = self.delta0_grid.iter().find(|d| !(**d >= 0.0 && d.is_finite())) {
            return Err(Error::param(format!("delta0 must be finite and >= 0, got {d}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBand {
    pub family: FamilyKind,
    pub delta0_grid: Vec<f64>,
    pub lower: Vec<f64>,
    pub point: Vec<f64>,
    pub upper: Vec<f64>,
    pub percentiles: (f64, f64),
    pub n_samples: usize,
    /// Draws rejected (negative mean, tiny variance or failed fit) and redrawn.
    pub rejected: usize,
}

/// Attempts per draw before the band is abandoned.
const MAX_ATTEMPTS: usize = 10;
/// Variance draws below this fraction of `ŝ²` are redrawn.
const S2_FLOOR: f64 = 1e-4;

fn curve(family: &NullFamily, n: usize, grid: &[f64], cfg: &QuadratureConfig) -> Result<Vec<f64>> {
    grid.iter()
        .map(|&d| fork_rate_iid(family, n, d, cfg).map(|r| r.value))
        .collect()
}

/// Percentile band on the fitted i.i.d. fork-rate curve.
///
/// Each draw samples `m` and `s²` from their Gaussian sampling laws, refits
/// the family and recomputes the curve. Draw `k` uses its own RNG stream,
/// so the band does not depend on the thread count.
pub fn confidence_band(counts: &BlockCounts, lambda_total: f64, bc: &BandConfig) -> Result<ConfidenceBand> {
    bc.validate()?;
    let n = counts.len();
    let mp = fit_moments(counts, lambda_total)?;
    let unc = estimator_uncertainty(counts, lambda_total)?;
    let cfg = &bc.quadrature;
    let point_family = method_of_moments(mp, bc.family)?;
    let point = curve(&point_family, n, &bc.delta0_grid, cfg)?;

    let s2_hat = mp.s * mp.s;
    let m_law = Normal::new(mp.m, unc.var_m.sqrt()).map_err(|e| Error::param(e.to_string()))?;
    let s2_law = Normal::new(s2_hat, unc.var_s2.sqrt()).map_err(|e| Error::param(e.to_string()))?;

    let draw = |k: usize| -> Result<(Vec<f64>, usize)> {
        let mut rng = ChaCha8Rng::seed_from_u64(bc.seed);
        rng.set_stream(k as u64);
        let mut last = None;
        for attempt in 0..MAX_ATTEMPTS {
            let m = m_law.sample(&mut rng);
            let s2 = s2_law.sample(&mut rng);
            if !(m > 0.0) || !(s2 >= S2_FLOOR * s2_hat) {
                continue;
            }
            let fitted = method_of_moments(MomentPair { m, s: s2.sqrt() }, bc.family)
                .and_then(|f| curve(&f, n, &bc.delta0_grid, cfg));
            match fitted {
                Ok(c) => return Ok((c, attempt)),
                Err(e) => last = Some(e),
            }
        }
        Err(Error::InvalidModel(format!(
            "band draw {k} failed {MAX_ATTEMPTS} times{}",
            last.map(|e| format!(": {e}")).unwrap_or_default()
        )))
    };
    let run = || (0..bc.n_samples).into_par_iter().map(draw).collect::<Result<Vec<_>>>();
    let draws = if bc.threads == 0 {
        run()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(bc.threads)
            .build()
            .map_err(|e| Error::param(format!("cannot start {} threads: {e}", bc.threads)))?
            .install(run)?
    };

    let rejected = draws.iter().map(|(_, r)| r).sum();
    let mut lower = Vec::with_capacity(point.len());
    let mut upper = Vec::with_capacity(point.len());
    let mut column = Vec::with_capacity(draws.len());
    for j in 0..point.len() {
        column.clear();
        column.extend(draws.iter().map(|(c, _)| c[j]));
        column.sort_by(f64::total_cmp);
        lower.push(percentile(&column, bc.percentiles.0));
        upper.push(percentile(&column, bc.percentiles.1));
    }
    Ok(ConfidenceBand {
        family: bc.family,
        delta0_grid: bc.delta0_grid.clone(),
        lower,
        point,
        upper,
        percentiles: bc.percentiles,
        n_samples: bc.n_samples,
        rejected,
    })
}

/// Linear-interpolation percentile of sorted data.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p / 100.0;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Appends `n_zero` miners that found no blocks.
pub fn add_zero_miners(counts: &BlockCounts, n_zero: usize) -> BlockCounts {
    counts.with_appended_zeros(n_zero)
}
