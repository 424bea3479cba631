use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Parametric law for a single miner's hash rate (blocks/s).
///
/// `TruncatedPowerLaw { alpha, beta }` has density
/// `β^(1−α) λ^(−α) e^(−βλ) / Γ(1−α)`, i.e. a Gamma law with shape `1−α` and
/// rate `β`. With `alpha = 0` it is `Exponential { rate: beta }`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NullFamily {
    Exponential { rate: f64 },
    LogNormal { mu: f64, sigma: f64 },
    TruncatedPowerLaw { alpha: f64, beta: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Exponential,
    LogNormal,
    TruncatedPowerLaw,
}

impl FamilyKind {
    pub const ALL: [FamilyKind; 3] = [
        FamilyKind::Exponential,
        FamilyKind::LogNormal,
        FamilyKind::TruncatedPowerLaw,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            FamilyKind::Exponential => "exp",
            FamilyKind::LogNormal => "lognormal",
            FamilyKind::TruncatedPowerLaw => "tpl",
        }
    }
}

impl fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for FamilyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exp" | "exponential" => Ok(FamilyKind::Exponential),
            "lognormal" | "ln" | "log_normal" => Ok(FamilyKind::LogNormal),
            "tpl" | "truncated_power_law" => Ok(FamilyKind::TruncatedPowerLaw),
            other => Err(Error::InvalidFamily(format!("unknown family `{other}`"))),
        }
    }
}

impl NullFamily {
    pub fn kind(&self) -> FamilyKind {
        match self {
            NullFamily::Exponential { .. } => FamilyKind::Exponential,
            NullFamily::LogNormal { .. } => FamilyKind::LogNormal,
            NullFamily::TruncatedPowerLaw { .. } => FamilyKind::TruncatedPowerLaw,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            NullFamily::Exponential { rate } => {
                if !(rate > 0.0 && rate.is_finite()) {
                    return Err(Error::InvalidFamily(format!("exponential rate must be > 0, got {rate}")));
                }
            }
            NullFamily::LogNormal { mu, sigma } => {
                if !mu.is_finite() || !(sigma > 0.0 && sigma.is_finite()) {
                    return Err(Error::InvalidFamily(format!(
                        "log-normal needs finite mu and sigma > 0, got mu={mu}, sigma={sigma}"
                    )));
                }
            }
            NullFamily::TruncatedPowerLaw { alpha, beta } => {
                if !(alpha < 1.0) || !alpha.is_finite() {
                    return Err(Error::InvalidFamily(format!(
                        "truncated power law needs alpha < 1, got {alpha}"
                    )));
                }
                if !(beta > 0.0 && beta.is_finite()) {
                    return Err(Error::InvalidFamily(format!(
                        "truncated power law needs beta > 0, got {beta}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        match *self {
            NullFamily::Exponential { rate } => 1.0 / rate,
            NullFamily::LogNormal { mu, sigma } => (mu + 0.5 * sigma * sigma).exp(),
            NullFamily::TruncatedPowerLaw { alpha, beta } => (1.0 - alpha) / beta,
        }
    }

    pub fn std_dev(&self) -> f64 {
        match *self {
            NullFamily::Exponential { rate } => 1.0 / rate,
            NullFamily::LogNormal { sigma, .. } => self.mean() * (sigma * sigma).exp_m1().sqrt(),
            NullFamily::TruncatedPowerLaw { alpha, beta } => (1.0 - alpha).sqrt() / beta,
        }
    }

    pub fn density(&self, lambda: f64) -> f64 {
        if !(lambda > 0.0) {
            return 0.0;
        }
        match *self {
            NullFamily::Exponential { rate } => rate * (-rate * lambda).exp(),
            NullFamily::LogNormal { mu, sigma } => {
                let z = (lambda.ln() - mu) / sigma;
                (-0.5 * z * z).exp() / (lambda * sigma * (2.0 * PI).sqrt())
            }
            NullFamily::TruncatedPowerLaw { alpha, beta } => {
                let shape = 1.0 - alpha;
                (shape * beta.ln() - alpha * lambda.ln() - beta * lambda - ln_gamma(shape)).exp()
            }
        }
    }
}

impl fmt::Display for NullFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            NullFamily::Exponential { rate } => write!(f, "Exp(r={rate})"),
            NullFamily::LogNormal { mu, sigma } => write!(f, "LN(mu={mu}, sigma={sigma})"),
            NullFamily::TruncatedPowerLaw { alpha, beta } => {
                write!(f, "TPL(alpha={alpha}, beta={beta})")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{integrate_semi_infinite_scaled, QuadratureConfig};
    use approx::assert_relative_eq;

    #[test]
    fn validation() {
        assert!(NullFamily::Exponential { rate: 0.0 }.validate().is_err());
        assert!(NullFamily::LogNormal { mu: 0.0, sigma: 0.0 }.validate().is_err());
        assert!(NullFamily::TruncatedPowerLaw { alpha: 1.0, beta: 1.0 }.validate().is_err());
        assert!(NullFamily::TruncatedPowerLaw { alpha: 0.5, beta: -1.0 }.validate().is_err());
        assert!(NullFamily::TruncatedPowerLaw { alpha: -2.0, beta: 1.0 }.validate().is_ok());
    }

    #[test]
    fn densities_integrate_to_one() {
        let cfg = QuadratureConfig::default();
        for fam in [
            NullFamily::Exponential { rate: 20000.0 },
            NullFamily::LogNormal { mu: -10.708, sigma: 1.26864 },
            NullFamily::TruncatedPowerLaw { alpha: -0.5, beta: 5000.0 },
        ] {
            let total = integrate_semi_infinite_scaled(|x| fam.density(x), fam.mean(), &cfg).unwrap();
            assert_relative_eq!(total.value, 1.0, max_relative = 1e-8);
        }
    }

    #[test]
    fn parses_kinds() {
        assert_eq!("exp".parse::<FamilyKind>().unwrap(), FamilyKind::Exponential);
        assert_eq!("LogNormal".parse::<FamilyKind>().unwrap(), FamilyKind::LogNormal);
        assert_eq!("tpl".parse::<FamilyKind>().unwrap(), FamilyKind::TruncatedPowerLaw);
        assert!("weibull".parse::<FamilyKind>().is_err());
    }

    #[test]
    fn serde_shape() {
        let fam = NullFamily::TruncatedPowerLaw { alpha: 0.75, beta: 5000.0 };
        let json = serde_json::to_string(&fam).unwrap();
        assert_eq!(json, r#"{"kind":"truncated_power_law","alpha":0.75,"beta":5000.0}"#);
        assert_eq!(serde_json::from_str::<NullFamily>(&json).unwrap(), fam);
    }
}
