use proptest::prelude::*;

use bpre_core::cramer::{solve_lambda, CramerOptions};
use bpre_core::harness::{Cell, ResultTable};
use bpre_core::rng::{stream_rng, StreamDomain};
use bpre_core::stein::stein_solution;
use bpre_core::wlimit::{laplace_from_log_w, laplace_quenched_recursion, LaplaceEstimator};
use bpre_core::{Atom, EnvironmentModel, IncrementLaw, OffspringLaw};

fn two_atom(p1: f64, p2: f64, w: f64) -> EnvironmentModel {
    EnvironmentModel::new(
        vec![
            Atom {
                law: OffspringLaw::shifted_geometric(p1).unwrap(),
                prob: w,
            },
            Atom {
                law: OffspringLaw::shifted_geometric(p2).unwrap(),
                prob: 1.0 - w,
            },
        ],
        1.0,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn saddlepoint_residual_is_tiny(p1 in 0.05f64..0.6, p2 in 0.05f64..0.6, w in 0.2f64..0.8, frac in 0.01f64..1.0, n in 16usize..5000) {
        prop_assume!((p1 - p2).abs() > 0.05);
        let model = two_atom(p1, p2, w);
        let opts = CramerOptions::default();
        let sigma = model.variance().sqrt();
        let x = frac * opts.regime_guard * (n as f64).sqrt() * model.lambda0() * sigma;
        let lambda = solve_lambda(&model, x, n, &opts).unwrap();
        let target = x * sigma * (n as f64).sqrt();
        let residual = (n as f64 * model.tilted_mean_shift(lambda) - target).abs();
        prop_assert!(residual <= 1e-10 * target.max(1.0));
        prop_assert!(lambda > 0.0);
    }

    #[test]
    fn quenched_transform_is_a_laplace_transform(seed in any::<u64>(), t1 in 0.0f64..1e4, t2 in 0.0f64..1e4) {
        let model = two_atom(0.3, 0.1, 0.5);
        let mut rng = stream_rng(seed, StreamDomain::EnvironmentPaths, 0);
        let path: Vec<&OffspringLaw> = (0..20).map(|_| &model.atoms()[model.sample_atom(&mut rng)].law).collect();
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let a = laplace_quenched_recursion(&path, lo, 20).unwrap();
        let b = laplace_quenched_recursion(&path, hi, 20).unwrap();
        prop_assert!(a > 0.0 && a <= 1.0 && b > 0.0 && b <= 1.0);
        prop_assert!(b <= a + 1e-15);
    }

    #[test]
    fn empirical_transform_stays_in_unit_interval(log_w in prop::collection::vec(-5.0f64..2.0, 1..40), t in 0.0f64..50.0) {
        let curve = laplace_from_log_w(&log_w, &[0.0, t], LaplaceEstimator::MonteCarlo { n: 1, replications: log_w.len() }).unwrap();
        prop_assert_eq!(curve.phi[0], 1.0);
        prop_assert!(curve.phi[1] > 0.0 && curve.phi[1] <= 1.0);
    }

    #[test]
    fn stein_solution_is_bounded(x in -10.0f64..10.0, w in -50.0f64..50.0) {
        let e = stein_solution(x, w);
        prop_assert!(e.f.abs() <= 1.0 && e.f_prime.abs() <= 1.0);
        prop_assert!(e.f > 0.0);
    }

    #[test]
    fn csv_rows_round_trip(values in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 0..20)) {
        let mut table = ResultTable::new(&["i", "v"]);
        for (i, v) in values.iter().enumerate() {
            table.push(vec![Cell::from(i), Cell::from(*v)]);
        }
        let csv = table.to_csv_string();
        let parsed: Vec<f64> = csv.lines().skip(2).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
        prop_assert_eq!(parsed.len(), values.len());
        for (a, b) in parsed.iter().zip(&values) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn tilted_weights_form_a_distribution(p1 in 0.05f64..0.9, p2 in 0.05f64..0.9, w in 0.1f64..0.9, lambda in -2.0f64..2.0) {
        let model = two_atom(p1, p2, w);
        let weights = model.tilted_weights(lambda);
        prop_assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(weights.iter().all(|q| *q > 0.0));
    }
}
