//! Soft-fork probabilities for proof-of-work chains with heterogeneous miners.
//!
//! The crate is organised bottom-up:
//!
//! * [`quadrature`]: adaptive Gauss–Kronrod integration and the Laplace
//!   transforms of every hash-rate law the engine understands.
//! * [`model`]: miner sets, block counts, hash-rate models and results.
//! * [`forkrate`]: the analytic fork-rate engine and implied-parameter inversions.
//! * [`simulate`]: a Monte Carlo mining simulator used to validate the engine.
//! * [`estimate`]: hash-rate estimation, method-of-moments fitting and
//!   confidence bands.
//! * [`ingest`]: CSV parsers, period segmentation and per-period statistics.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimate;
pub mod forkrate;
pub mod ingest;
pub mod model;
pub mod quadrature;
pub mod simulate;

pub use error::{Error, Result};
pub use model::{BlockCounts, ForkRateResult, HashRateModel, Method, MinerSet, PeriodRecord};
pub use quadrature::{FamilyKind, NullFamily, QuadratureConfig};
