//! Value types shared by the engine, the simulator and the pipeline.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::NullFamily;

/// Neumaier-compensated sum.
pub(crate) fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Per-miner hash rates λᵢ in blocks/s.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct MinerSet {
    lambdas: Vec<f64>,
    total: f64,
}

impl MinerSet {
    pub fn new(lambdas: Vec<f64>) -> Result<Self> {
        if lambdas.len() < 2 {
            return Err(Error::InvalidModel(format!(
                "a miner set needs at least 2 miners, got {}",
                lambdas.len()
            )));
        }
        if let Some(bad) = lambdas.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidModel(format!("hash rates must be positive, got {bad}")));
        }
        let total = compensated_sum(lambdas.iter().copied());
        if !total.is_finite() {
            return Err(Error::InvalidModel("total hash rate overflows".into()));
        }
        Ok(MinerSet { lambdas, total })
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    /// Λ = Σλᵢ
    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn shares(&self) -> Vec<f64> {
        self.lambdas.iter().map(|l| l / self.total).collect()
    }

    pub fn hhi(&self) -> f64 {
        self.lambdas.iter().map(|l| (l / self.total).powi(2)).sum()
    }

    /// `Σ_{j≠i} λⱼ` for every i, built from prefix and suffix sums so no
    /// subtraction from Λ is needed.
    pub fn others_totals(&self) -> Vec<f64> {
        let n = self.lambdas.len();
        let mut suffix = vec![0.0; n + 1];
        for i in (0..n).rev() {
            suffix[i] = suffix[i + 1] + self.lambdas[i];
        }
        let mut prefix = 0.0;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            out.push(prefix + suffix[i + 1]);
            prefix += self.lambdas[i];
        }
        out
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        MinerSet::new(self.lambdas.iter().map(|l| l * factor).collect())
    }
}

impl TryFrom<Vec<f64>> for MinerSet {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        MinerSet::new(v)
    }
}

impl From<MinerSet> for Vec<f64> {
    fn from(m: MinerSet) -> Self {
        m.lambdas
    }
}

/// Blocks mined per miner over one observation window.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u64>", into = "Vec<u64>")]
pub struct BlockCounts {
    counts: Vec<u64>,
    total: u64,
}

impl BlockCounts {
    pub fn new(counts: Vec<u64>) -> Result<Self> {
        if counts.len() < 2 {
            return Err(Error::InvalidModel(format!(
                "block counts need at least 2 miners, got {}",
                counts.len()
            )));
        }
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::AllZero);
        }
        Ok(BlockCounts { counts, total })
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// B = Σbᵢ
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn shares(&self) -> Vec<f64> {
        let b = self.total as f64;
        self.counts.iter().map(|&c| c as f64 / b).collect()
    }

    /// `γ = B/Λ`
    pub fn gamma(&self, lambda_total: f64) -> Result<f64> {
        if !(lambda_total > 0.0 && lambda_total.is_finite()) {
            return Err(Error::param(format!("total hash rate must be > 0, got {lambda_total}")));
        }
        Ok(self.total as f64 / lambda_total)
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }

    pub(crate) fn with_appended_zeros(&self, n_zero: usize) -> Self {
        let mut counts = self.counts.clone();
        counts.resize(counts.len() + n_zero, 0);
        BlockCounts {
            counts,
            total: self.total,
        }
    }
}

impl TryFrom<Vec<u64>> for BlockCounts {
    type Error = Error;

    fn try_from(v: Vec<u64>) -> Result<Self> {
        BlockCounts::new(v)
    }
}

impl From<BlockCounts> for Vec<u64> {
    fn from(c: BlockCounts) -> Self {
        c.counts
    }
}

/// How miners' hash rates are specified for a fork-rate computation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HashRateModel {
    /// Known hash rates (conditional / frequentist).
    Fixed { lambdas: MinerSet },
    /// `n` miners with i.i.d. hash rates from a parametric family.
    IidNull { family: NullFamily, n: usize },
    /// Independent, non-identical parametric laws, one per miner.
    InidNull { families: Vec<NullFamily> },
    /// i.i.d. draws from the equal-weight mixture of per-miner posteriors.
    SemiEmpiricalIid { counts: BlockCounts, gamma: f64 },
    /// Each miner's hash rate drawn from its own posterior.
    SemiEmpiricalInid { counts: BlockCounts, gamma: f64 },
}

impl HashRateModel {
    pub fn semi_empirical_iid(counts: BlockCounts, lambda_total: f64) -> Result<Self> {
        let gamma = counts.gamma(lambda_total)?;
        Ok(HashRateModel::SemiEmpiricalIid { counts, gamma })
    }

    pub fn semi_empirical_inid(counts: BlockCounts, lambda_total: f64) -> Result<Self> {
        let gamma = counts.gamma(lambda_total)?;
        Ok(HashRateModel::SemiEmpiricalInid { counts, gamma })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            HashRateModel::Fixed { .. } => Ok(()),
            HashRateModel::IidNull { family, n } => {
                if *n < 2 {
                    return Err(Error::InvalidModel(format!("need n >= 2 miners, got {n}")));
                }
                family.validate()
            }
            HashRateModel::InidNull { families } => {
                if families.len() < 2 {
                    return Err(Error::InvalidModel(format!(
                        "need at least 2 miners, got {}",
                        families.len()
                    )));
                }
                families.iter().try_for_each(NullFamily::validate)
            }
            HashRateModel::SemiEmpiricalIid { gamma, .. } | HashRateModel::SemiEmpiricalInid { gamma, .. } => {
                if !(*gamma > 0.0 && gamma.is_finite()) {
                    return Err(Error::InvalidModel(format!("gamma must be > 0, got {gamma}")));
                }
                Ok(())
            }
        }
    }

    pub fn miner_count(&self) -> usize {
        match self {
            HashRateModel::Fixed { lambdas } => lambdas.len(),
            HashRateModel::IidNull { n, .. } => *n,
            HashRateModel::InidNull { families } => families.len(),
            HashRateModel::SemiEmpiricalIid { counts, .. } | HashRateModel::SemiEmpiricalInid { counts, .. } => {
                counts.len()
            }
        }
    }

    /// Expected total hash rate `E[Λ]`.
    pub fn expected_total_rate(&self) -> f64 {
        match self {
            HashRateModel::Fixed { lambdas } => lambdas.total(),
            HashRateModel::IidNull { family, n } => *n as f64 * family.mean(),
            HashRateModel::InidNull { families } => families.iter().map(NullFamily::mean).sum(),
            HashRateModel::SemiEmpiricalIid { counts, gamma } | HashRateModel::SemiEmpiricalInid { counts, gamma } => {
                counts.counts().iter().map(|&b| (1.0 + b as f64) / gamma).sum()
            }
        }
    }
}

/// `τ = Δ₀·Λ`: propagation delay measured in expected block intervals.
pub fn characteristic_time(delta0: f64, lambda_total: f64) -> f64 {
    delta0 * lambda_total
}

/// Expected time until the first of all miners finds a block, `1/Λ`.
pub fn expected_block_time(lambda_total: f64) -> f64 {
    1.0 / lambda_total
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Conditional,
    Taylor,
    ClosedForm,
    Quadrature,
    SemiEmpirical,
    MonteCarlo,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Conditional => "conditional",
            Method::Taylor => "taylor",
            Method::ClosedForm => "closed_form",
            Method::Quadrature => "quadrature",
            Method::SemiEmpirical => "semi_empirical",
            Method::MonteCarlo => "monte_carlo",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A computed fork probability `C(Δ₀)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForkRateResult {
    pub value: f64,
    pub method: Method,
    pub error_estimate: f64,
    pub delta0: f64,
    /// `Δ₀·E[Λ]`
    pub tau: f64,
    pub inputs: String,
}

/// Statistics for one fixed-length window of blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodRecord {
    pub index: usize,
    pub first_height: u64,
    pub last_height: u64,
    pub start_time: i64,
    pub end_time: i64,
    /// `(miner_id, blocks)` sorted by descending count, then id.
    pub miners: Vec<(String, u64)>,
    pub lambda_total: f64,
    pub n_miners: usize,
    pub hhi: f64,
    pub fork_rate_empirical: f64,
    pub prop_p50: f64,
    pub prop_p90: f64,
    pub prop_p99: f64,
    /// False when fewer than two miners were active.
    pub usable: bool,
}

impl PeriodRecord {
    pub fn counts(&self) -> Result<BlockCounts> {
        BlockCounts::new(self.miners.iter().map(|(_, c)| *c).collect())
    }

    pub fn total_blocks(&self) -> u64 {
        self.miners.iter().map(|(_, c)| c).sum()
    }
}
