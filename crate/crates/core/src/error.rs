use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("quadrature did not converge after {subdivisions} subdivisions (estimate {value:e}, error {error:e})")]
    NonConvergent {
        value: f64,
        error: f64,
        subdivisions: usize,
    },

    #[error("integrand is not finite at x = {x:e}")]
    NonFinite { x: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid family: {0}")]
    InvalidFamily(String),

    #[error("shares sum to {sum}, expected 1")]
    ShareSumViolation { sum: f64 },

    #[error("HHI of 1 leaves the implied delay undefined")]
    DegenerateHhi,

    #[error("invalid hash-rate model: {0}")]
    InvalidModel(String),

    #[error("every miner has zero blocks")]
    AllZero,

    #[error("invalid moments: {0}")]
    InvalidMoments(String),

    #[error("invalid compact target encoding {0:#010x}")]
    InvalidBits(u32),

    #[error("no data overlaps the period")]
    EmptyPeriod,

    #[error("block heights are not contiguous: height {height} is missing")]
    NonContiguous { height: u64 },

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// True for errors caused by unreadable or malformed input files.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. } | Error::Io { .. } | Error::NonContiguous { .. } | Error::InvalidBits(_)
        )
    }
}
