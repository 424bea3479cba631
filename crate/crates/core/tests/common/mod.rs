#![allow(dead_code)]

use forkcast_core::estimate::{method_of_moments, MomentPair};
use forkcast_core::{BlockCounts, FamilyKind, NullFamily};

/// Block counts of 35 miners over one 20000-block period, shaped like a
/// recent Bitcoin period (m ≈ 4.9e-5, s ≈ 1e-4 at Λ = 0.0017).
pub const FIXTURE_COUNTS: [u64; 35] = [
    5500, 3950, 2350, 1700, 1250, 930, 720, 580, 470, 390, 330, 280, 240, 205, 175, 150, 130, 110, 95, 80,
    70, 60, 50, 42, 35, 28, 22, 17, 13, 10, 7, 5, 3, 2, 1,
];

pub const FIXTURE_LAMBDA: f64 = 0.0017;

pub fn fixture_counts() -> BlockCounts {
    BlockCounts::new(FIXTURE_COUNTS.to_vec()).unwrap()
}

/// Exp, LN and TPL fitted at m = 5e-5, s = 1e-4.
pub fn operating_point_families() -> [NullFamily; 3] {
    let mp = MomentPair { m: 5e-5, s: 1e-4 };
    FamilyKind::ALL.map(|k| method_of_moments(mp, k).unwrap())
}
