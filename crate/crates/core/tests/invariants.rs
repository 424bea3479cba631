use forkcast_core::estimate::{method_of_moments, MomentPair};
use forkcast_core::forkrate::{
    conditional_fork_rate, hhi, implied_delta0, pdf_delta_conditional, taylor_fork_rate,
};
use forkcast_core::ingest::{bits_to_expected_hashes, fork_rate_empirical, parse_blocks, parse_propagation, StaleRow};
use forkcast_core::quadrature::{laplace, laplace_weighted, posterior_laplace};
use forkcast_core::{FamilyKind, MinerSet, NullFamily, QuadratureConfig};
use proptest::prelude::*;
use std::path::Path;

fn miners() -> impl Strategy<Value = MinerSet> {
    prop::collection::vec(1e-6f64..1e-2, 2..40).prop_map(|v| MinerSet::new(v).unwrap())
}

fn family() -> impl Strategy<Value = NullFamily> {
    prop_oneof![
        (1e2f64..1e5).prop_map(|rate| NullFamily::Exponential { rate }),
        (-12.0f64..-6.0, 0.1f64..2.0).prop_map(|(mu, sigma)| NullFamily::LogNormal { mu, sigma }),
        (-1.0f64..0.95, 1e2f64..1e5).prop_map(|(alpha, beta)| NullFamily::TruncatedPowerLaw { alpha, beta }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hhi_in_unit_interval(m in miners()) {
        let h = hhi(&m.shares()).unwrap();
        prop_assert!(h > 0.0 && h <= 1.0);
        prop_assert!(h >= 1.0 / m.len() as f64 - 1e-12);
    }

    #[test]
    fn conditional_monotone_in_delay(m in miners(), d in 0.0f64..5000.0, step in 0.0f64..500.0) {
        let a = conditional_fork_rate(&m, d).unwrap().value;
        let b = conditional_fork_rate(&m, d + step).unwrap().value;
        prop_assert!(b >= a);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn conditional_monotone_in_scaling(m in miners(), d in 0.1f64..1000.0, k in 1.01f64..10.0) {
        let a = conditional_fork_rate(&m, d).unwrap().value;
        let b = conditional_fork_rate(&m.scaled(k).unwrap(), d).unwrap().value;
        prop_assert!(b >= a - 4.0 * f64::EPSILON, "{a} {b}");
        if a < 0.99 {
            prop_assert!(b > a, "{a} {b}");
        }
    }

    #[test]
    fn taylor_error_bounded_by_tau(m in miners(), tau in 1e-5f64..0.1) {
        let d = tau / m.total();
        let exact = conditional_fork_rate(&m, d).unwrap().value;
        let approx = taylor_fork_rate(m.total(), m.hhi(), d).unwrap().value;
        prop_assert!((approx - exact).abs() <= tau * exact, "τ={tau}: {approx} vs {exact}");
    }

    #[test]
    fn pdf_is_derivative_of_cdf(m in miners(), tau in 1e-4f64..1.0) {
        let d = tau / m.total();
        let h = 1e-4 * d;
        let fd = (conditional_fork_rate(&m, d + h).unwrap().value - conditional_fork_rate(&m, d - h).unwrap().value) / (2.0 * h);
        let pdf = pdf_delta_conditional(&m, d);
        prop_assert!((fd - pdf).abs() <= 1e-6 * pdf, "{fd} vs {pdf}");
    }

    #[test]
    fn pdf_at_zero(m in miners()) {
        let expected = m.total() * (1.0 - m.hhi());
        prop_assert!((pdf_delta_conditional(&m, 0.0) - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn laplace_decreasing(f in family(), s1 in 0.0f64..1e5, gap in 1.0f64..1e5) {
        let cfg = QuadratureConfig::default();
        let a = laplace(&f, s1, &cfg).unwrap();
        let b = laplace(&f, s1 + gap, &cfg).unwrap();
        prop_assert!(a > b, "{f}: L({s1})={a} L({})={b}", s1 + gap);
        prop_assert!(a <= 1.0 + 1e-9);
    }

    #[test]
    fn laplace_normalised(f in family()) {
        let cfg = QuadratureConfig::default();
        prop_assert!((laplace(&f, 0.0, &cfg).unwrap() - 1.0).abs() <= 1e-9);
        let w = laplace_weighted(&f, 0.0, &cfg).unwrap();
        prop_assert!((w - f.mean()).abs() <= 1e-9 * f.mean());
    }

    #[test]
    fn tpl_zero_alpha_matches_exponential(r in 1.0f64..1e5, s in 0.0f64..1e6) {
        let cfg = QuadratureConfig::default();
        let e = NullFamily::Exponential { rate: r };
        let t = NullFamily::TruncatedPowerLaw { alpha: 0.0, beta: r };
        let (a, b) = (laplace(&e, s, &cfg).unwrap(), laplace(&t, s, &cfg).unwrap());
        prop_assert!((a - b).abs() <= 1e-10 * a);
        let (a, b) = (laplace_weighted(&e, s, &cfg).unwrap(), laplace_weighted(&t, s, &cfg).unwrap());
        prop_assert!((a - b).abs() <= 1e-10 * a);
    }

    #[test]
    fn posterior_normalised(b in 0u32..5000, gamma in 1.0f64..1e8) {
        prop_assert_eq!(posterior_laplace(b as f64, gamma, 0.0), 1.0);
    }

    #[test]
    fn moments_roundtrip(m in 1e-7f64..1e-2, ratio in 0.05f64..20.0) {
        let s = m * ratio;
        for kind in FamilyKind::ALL {
            let f = method_of_moments(MomentPair { m, s }, kind).unwrap();
            prop_assert!((f.mean() - m).abs() <= 1e-10 * m);
            if kind != FamilyKind::Exponential {
                prop_assert!((f.std_dev() - s).abs() <= 1e-10 * s);
            }
        }
    }

    #[test]
    fn implied_delay_roundtrip(l in 1e-4f64..1e-2, h in 0.01f64..0.99, d in 0.01f64..100.0) {
        let c = taylor_fork_rate(l, h, d).unwrap().value;
        prop_assume!(c < 1.0);
        let back = implied_delta0(c, l, h).unwrap().value;
        prop_assert!((back - d).abs() <= 4.0 * f64::EPSILON * d);
    }

    #[test]
    fn empirical_rate_ignores_order_and_duplicates(mut heights in prop::collection::vec(0u64..20_000, 0..200), seed in any::<u64>()) {
        let rows: Vec<StaleRow> = heights.iter().map(|&height| StaleRow { height }).collect();
        let base = fork_rate_empirical(&rows, 0, 19_999, 1.476).unwrap();
        heights.extend(heights.clone());
        let n = heights.len();
        if n > 1 {
            heights.rotate_left((seed % n as u64) as usize);
            heights.reverse();
        }
        let rows: Vec<StaleRow> = heights.iter().map(|&height| StaleRow { height }).collect();
        prop_assert_eq!(fork_rate_empirical(&rows, 0, 19_999, 1.476).unwrap(), base);
    }

    #[test]
    fn expected_hashes_decrease_with_target(exp in 4u32..=32, mantissa in 1u32..0x7f_fffe) {
        let lo = bits_to_expected_hashes((exp << 24) | mantissa).unwrap();
        let hi = bits_to_expected_hashes((exp << 24) | (mantissa + 1)).unwrap();
        prop_assert!(hi < lo);
    }

    #[test]
    fn block_parser_never_panics(body in "[0-9a-fx,\n ]{0,200}") {
        let text = format!("height,timestamp,bits,miner_id\n{body}");
        // Either every row parses or a line-numbered error is returned.
        match parse_blocks(text.as_bytes(), Path::new("fuzz.csv")) {
            Ok(rows) => prop_assert!(rows.len() <= body.lines().count()),
            Err(e) => {
                let ok = matches!(e, forkcast_core::Error::Parse { line, .. } if line >= 1);
                prop_assert!(ok, "{}", e);
            }
        }
    }

    #[test]
    fn propagation_parser_never_panics(body in "[0-9.,\n-]{0,200}") {
        let text = format!("timestamp,p50,p90,p99\n{body}");
        if let Err(e) = parse_propagation(text.as_bytes(), Path::new("fuzz.csv")) {
            let ok = matches!(e, forkcast_core::Error::Parse { .. });
            prop_assert!(ok, "{}", e);
        }
    }
}

#[test]
fn equal_miners_closed_form() {
    for n in [2usize, 5, 35, 300] {
        for lambda_total in [1e-4, 0.0017, 0.01] {
            let m = MinerSet::new(vec![lambda_total / n as f64; n]).unwrap();
            for d in [0.1, 1.0, 60.0, 600.0, 6000.0] {
                let expected = -(-d * lambda_total * (n as f64 - 1.0) / n as f64).exp_m1();
                let got = conditional_fork_rate(&m, d).unwrap().value;
                assert!((got - expected).abs() <= 1e-12 * expected, "{n} {d}: {got} {expected}");
            }
        }
    }
}
