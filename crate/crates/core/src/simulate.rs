//! Monte Carlo mining simulator.
//!
//! Each round draws hash rates from the model (or reuses a fixed vector),
//! lets every miner solve after an exponential time with its own rate, and
//! records a fork when the two fastest solutions are less than `Δ₀` apart.
//!
//! Rounds are grouped in fixed blocks of [`BLOCK_ROUNDS`]; block `k` draws
//! from ChaCha8 stream `k` of the seed, and block partials are reduced in
//! block order. Results are therefore bit-identical for any thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Exp1, Gamma, InverseGaussian, LogNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::HashRateModel;
use crate::quadrature::NullFamily;

/// Rounds per RNG stream.
pub const BLOCK_ROUNDS: u64 = 1 << 14;

/// Stream reserved for a once-per-run hash-rate draw.
const PER_RUN_STREAM: u64 = u64::MAX;

/// When random hash rates are redrawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resampling {
    /// Fresh hash rates every round.
    #[default]
    PerRound,
    /// One draw for the whole run.
    PerRun,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub model: HashRateModel,
    pub delta0: f64,
    pub rounds: u64,
    pub seed: u64,
    /// Worker threads; 0 uses the global pool.
    #[serde(default)]
    pub threads: usize,
    #[serde(default)]
    pub resampling: Resampling,
}

impl SimConfig {
    pub fn new(model: HashRateModel, delta0: f64, rounds: u64, seed: u64) -> Self {
        SimConfig {
            model,
            delta0,
            rounds,
            seed,
            threads: 0,
            resampling: Resampling::PerRound,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.rounds == 0 {
            return Err(Error::param("rounds must be >= 1"));
        }
        check_delta0(self.delta0)
    }
}

fn check_delta0(delta0: f64) -> Result<()> {
    if delta0 >= 0.0 && delta0.is_finite() {
        Ok(())
    } else {
        Err(Error::param(format!("delta0 must be finite and >= 0, got {delta0}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimOutcome {
    pub delta0: f64,
    pub rounds: u64,
    pub n_fork: u64,
    pub fork_rate: f64,
    pub stderr: f64,
    pub mean_min_time: f64,
}

impl SimOutcome {
    fn new(delta0: f64, rounds: u64, n_fork: u64, sum_min: f64) -> Self {
        let n = rounds as f64;
        let p = n_fork as f64 / n;
        SimOutcome {
            delta0,
            rounds,
            n_fork,
            fork_rate: p,
            stderr: (p * (1.0 - p) / n).sqrt(),
            mean_min_time: sum_min / n,
        }
    }

    /// `|analytic − simulated| / stderr`; infinite when the two differ and
    /// the standard error is zero.
    pub fn z_score(&self, analytic: f64) -> f64 {
        let diff = (analytic - self.fork_rate).abs();
        if diff == 0.0 {
            0.0
        } else {
            diff / self.stderr
        }
    }
}

#[derive(Clone, Debug)]
enum LawSampler {
    Exp(Exp<f64>),
    LogNormal(LogNormal<f64>),
    Gamma(Gamma<f64>),
    /// `1/λ` is inverse Gaussian.
    InvInverseGaussian(InverseGaussian<f64>),
}

impl LawSampler {
    fn family(family: &NullFamily) -> Result<Self> {
        family.validate()?;
        let bad = |e: &dyn std::fmt::Display| Error::InvalidModel(format!("{family}: {e}"));
        Ok(match *family {
            NullFamily::Exponential { rate } => LawSampler::Exp(Exp::new(rate).map_err(|e| bad(&e))?),
            NullFamily::LogNormal { mu, sigma } => {
                LawSampler::LogNormal(LogNormal::new(mu, sigma).map_err(|e| bad(&e))?)
            }
            NullFamily::TruncatedPowerLaw { alpha, beta } => {
                LawSampler::Gamma(Gamma::new(1.0 - alpha, 1.0 / beta).map_err(|e| bad(&e))?)
            }
        })
    }

    /// Posterior of a miner's rate after `blocks` blocks with `γ = B/Λ`.
    fn posterior(blocks: u64, gamma: f64) -> Result<Self> {
        let bad = |e: &dyn std::fmt::Display| Error::InvalidModel(format!("posterior b={blocks}: {e}"));
        if blocks == 0 {
            Ok(LawSampler::Gamma(Gamma::new(0.5, 2.0 / gamma).map_err(|e| bad(&e))?))
        } else {
            let ig = InverseGaussian::new(gamma / blocks as f64, gamma).map_err(|e| bad(&e))?;
            Ok(LawSampler::InvInverseGaussian(ig))
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            LawSampler::Exp(d) => d.sample(rng),
            LawSampler::LogNormal(d) => d.sample(rng),
            LawSampler::Gamma(d) => d.sample(rng),
            LawSampler::InvInverseGaussian(d) => 1.0 / d.sample(rng),
        }
    }
}

/// Per-round source of hash-rate vectors.
#[derive(Clone, Debug)]
enum RateSource {
    Fixed(Vec<f64>),
    /// Miner `i` uses `laws[index[i]]`.
    Independent { laws: Vec<LawSampler>, index: Vec<usize> },
    /// Every miner picks a law uniformly at random.
    Mixture { laws: Vec<LawSampler>, n: usize },
}

impl RateSource {
    fn from_model(model: &HashRateModel) -> Result<Self> {
        model.validate()?;
        Ok(match model {
            HashRateModel::Fixed { lambdas } => RateSource::Fixed(lambdas.lambdas().to_vec()),
            HashRateModel::IidNull { family, n } => RateSource::Independent {
                laws: vec![LawSampler::family(family)?],
                index: vec![0; *n],
            },
            HashRateModel::InidNull { families } => RateSource::Independent {
                laws: families.iter().map(LawSampler::family).collect::<Result<_>>()?,
                index: (0..families.len()).collect(),
            },
            HashRateModel::SemiEmpiricalInid { counts, gamma } => RateSource::Independent {
                laws: counts
                    .counts()
                    .iter()
                    .map(|&b| LawSampler::posterior(b, *gamma))
                    .collect::<Result<_>>()?,
                index: (0..counts.len()).collect(),
            },
            HashRateModel::SemiEmpiricalIid { counts, gamma } => RateSource::Mixture {
                laws: counts
                    .counts()
                    .iter()
                    .map(|&b| LawSampler::posterior(b, *gamma))
                    .collect::<Result<_>>()?,
                n: counts.len(),
            },
        })
    }

    fn fill<R: Rng>(&self, rng: &mut R, out: &mut Vec<f64>) -> Result<()> {
        match self {
            RateSource::Fixed(v) => {
                out.clear();
                out.extend_from_slice(v);
                return Ok(());
            }
            RateSource::Independent { laws, index } => {
                out.clear();
                out.extend(index.iter().map(|&i| laws[i].sample(rng)));
            }
            RateSource::Mixture { laws, n } => {
                out.clear();
                for _ in 0..*n {
                    let i = rng.random_range(0..laws.len());
                    out.push(laws[i].sample(rng));
                }
            }
        }
        match out.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            Some(bad) => Err(Error::InvalidModel(format!("sampled hash rate {bad} is not positive"))),
            None => Ok(()),
        }
    }

    fn is_fixed(&self) -> bool {
        matches!(self, RateSource::Fixed(_))
    }
}

fn block_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

struct BlockTally {
    forks: Vec<u64>,
    sum_min: f64,
}

fn run_block(
    source: &RateSource,
    thresholds: &[f64],
    seed: u64,
    block: u64,
    rounds: u64,
) -> Result<BlockTally> {
    let mut rng = block_rng(seed, block);
    let mut lambdas = Vec::new();
    let mut forks = vec![0u64; thresholds.len()];
    let mut sum_min = 0.0;
    if source.is_fixed() {
        source.fill(&mut rng, &mut lambdas)?;
    }
    for _ in 0..rounds {
        if !source.is_fixed() {
            source.fill(&mut rng, &mut lambdas)?;
        }
        let mut first = f64::INFINITY;
        let mut second = f64::INFINITY;
        for &l in &lambdas {
            let e: f64 = Exp1.sample(&mut rng);
            let t = e / l;
            if t < first {
                second = first;
                first = t;
            } else if t < second {
                second = t;
            }
        }
        let gap = second - first;
        for (count, &d) in forks.iter_mut().zip(thresholds) {
            if gap < d {
                *count += 1;
            }
        }
        sum_min += first;
    }
    Ok(BlockTally { forks, sum_min })
}

fn run(cfg: &SimConfig, thresholds: &[f64]) -> Result<(Vec<u64>, f64)> {
    cfg.validate()?;
    for &d in thresholds {
        check_delta0(d)?;
    }
    let mut source = RateSource::from_model(&cfg.model)?;
    if cfg.resampling == Resampling::PerRun && !source.is_fixed() {
        let mut lambdas = Vec::new();
        source.fill(&mut block_rng(cfg.seed, PER_RUN_STREAM), &mut lambdas)?;
        source = RateSource::Fixed(lambdas);
    }
    let blocks = cfg.rounds.div_ceil(BLOCK_ROUNDS);
    let work = || {
        (0..blocks)
            .into_par_iter()
            .map(|k| {
                let len = BLOCK_ROUNDS.min(cfg.rounds - k * BLOCK_ROUNDS);
                run_block(&source, thresholds, cfg.seed, k, len)
            })
            .collect::<Result<Vec<_>>>()
    };
    let tallies = if cfg.threads == 0 {
        work()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| Error::param(format!("cannot start {} threads: {e}", cfg.threads)))?
            .install(work)?
    };
    let mut forks = vec![0u64; thresholds.len()];
    let mut sum_min = 0.0;
    for t in &tallies {
        for (acc, n) in forks.iter_mut().zip(&t.forks) {
            *acc += n;
        }
        sum_min += t.sum_min;
    }
    Ok((forks, sum_min))
}

/// Fraction of rounds in which the two fastest miners finish less than
/// `cfg.delta0` apart.
pub fn simulate_fork_rate(cfg: &SimConfig) -> Result<SimOutcome> {
    let (forks, sum_min) = run(cfg, &[cfg.delta0])?;
    Ok(SimOutcome::new(cfg.delta0, cfg.rounds, forks[0], sum_min))
}

/// Mean time until the first block of a round.
pub fn simulate_min_time(cfg: &SimConfig) -> Result<f64> {
    Ok(simulate_fork_rate(cfg)?.mean_min_time)
}

/// Fork rates for several delays from the same rounds (common random
/// numbers); `cfg.delta0` is ignored.
pub fn simulate_fork_curve(cfg: &SimConfig, delta0s: &[f64]) -> Result<Vec<SimOutcome>> {
    let (forks, sum_min) = run(cfg, delta0s)?;
    Ok(delta0s
        .iter()
        .zip(forks)
        .map(|(&d, n)| SimOutcome::new(d, cfg.rounds, n, sum_min))
        .collect())
}
