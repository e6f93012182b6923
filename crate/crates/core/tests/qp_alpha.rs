use hjb_core::data::six_asset_model;
use hjb_core::{solve_qp, ConstraintSet, MarketModel, PiecewiseAlpha};
use proptest::prelude::*;

/// Random positive definite model `Sigma = A'A + 0.05 I` of size 2..=5.
fn model() -> impl Strategy<Value = MarketModel> {
    (2usize..=5).prop_flat_map(|n| {
        (
            prop::collection::vec(-0.2f64..0.6, n),
            prop::collection::vec(prop::collection::vec(-0.7f64..0.7, n), n),
        )
            .prop_map(move |(mu, a)| {
                let sigma = (0..n)
                    .map(|i| {
                        (0..n)
                            .map(|j| (0..n).map(|k| a[k][i] * a[k][j]).sum::<f64>() + if i == j { 0.05 } else { 0.0 })
                            .collect()
                    })
                    .collect();
                MarketModel::new(mu, sigma).unwrap()
            })
    })
}

fn constraints() -> impl Strategy<Value = ConstraintSet> {
    prop_oneof![Just(ConstraintSet::Simplex), Just(ConstraintSet::MertonSimplex)]
}

fn phi() -> impl Strategy<Value = f64> {
    (-4.0f64..3.0).prop_map(f64::exp)
}

/// Maps arbitrary non-negative weights onto the feasible set.
fn feasible(raw: &[f64], constraints: ConstraintSet) -> Vec<f64> {
    let total: f64 = raw.iter().sum::<f64>() + 1e-12;
    match constraints {
        ConstraintSet::Simplex => raw.iter().map(|w| w / total).collect(),
        ConstraintSet::MertonSimplex => raw.iter().map(|w| w / total.max(1.0)).collect(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn optimum_beats_random_feasible_points(
        m in model(),
        c in constraints(),
        phi in phi(),
        raw in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 5), 16),
    ) {
        let sol = solve_qp(&m, phi, c).unwrap();
        for r in &raw {
            let theta = feasible(&r[..m.n()], c);
            prop_assert!(sol.value <= m.objective(phi, &theta) + 1e-12);
        }
    }

    #[test]
    fn kkt_conditions_hold(m in model(), c in constraints(), phi in phi()) {
        let sol = solve_qp(&m, phi, c).unwrap();
        let sum: f64 = sol.theta.iter().sum();
        prop_assert!(sol.theta.iter().all(|&t| t >= 0.0));
        match c {
            ConstraintSet::Simplex => prop_assert!((sum - 1.0).abs() <= 1e-12),
            ConstraintSet::MertonSimplex => prop_assert!(sum <= 1.0 + 1e-12),
        }
        if !sol.budget_active {
            prop_assert_eq!(sol.multiplier, 0.0);
        }
        prop_assert!(sol.multiplier <= 1e-9 || c == ConstraintSet::Simplex);
        let grad = sol.kkt_residual(&m);
        for i in 0..m.n() {
            if sol.active_set.contains(&i) {
                prop_assert_eq!(sol.theta[i], 0.0);
                prop_assert!(grad[i] >= -1e-9, "dual sign at {}: {}", i, grad[i]);
            } else {
                prop_assert!(grad[i].abs() <= 1e-9, "stationarity at {}: {}", i, grad[i]);
            }
        }
        let expected = -m.mu().iter().zip(&sol.theta).map(|(a, b)| a * b).sum::<f64>()
            + 0.5 * phi * m.sigma().quad_form(&sol.theta);
        prop_assert!((sol.value - expected).abs() <= 1e-12 * (1.0 + expected.abs()));
        prop_assert!((sol.derivative - 0.5 * m.sigma().quad_form(&sol.theta)).abs() <= 1e-15);
    }

    #[test]
    fn value_is_nondecreasing_in_phi(m in model(), c in constraints(), phi in phi(), step in 1e-3f64..1.0) {
        let lo = solve_qp(&m, phi, c).unwrap().value;
        let hi = solve_qp(&m, phi + step, c).unwrap().value;
        prop_assert!(hi >= lo - 1e-12);
    }

    #[test]
    fn derivative_stays_within_variance_bounds(m in model(), phi in phi()) {
        let d = solve_qp(&m, phi, ConstraintSet::Simplex).unwrap().derivative;
        let lower = m.derivative_lower_bound().unwrap();
        prop_assert!(d >= lower - 1e-12 && d <= m.derivative_upper_bound() + 1e-12);
    }

    #[test]
    fn scaling_the_model_scales_the_value(m in model(), c in constraints(), phi in phi(), s in 0.1f64..10.0) {
        let base = solve_qp(&m, phi, c).unwrap();
        let scaled = solve_qp(&m.scaled(s).unwrap(), phi, c).unwrap();
        prop_assert!((scaled.value - s * base.value).abs() <= 1e-10 * (1.0 + scaled.value.abs()));
        for (a, b) in scaled.theta.iter().zip(&base.theta) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn pieces_match_pointwise_solves(m in model(), c in constraints(), t in 0.0f64..1.0) {
        let alpha = PiecewiseAlpha::build(&m, 0.01, 20.0, c).unwrap();
        let phi = 0.01 + t * (20.0 - 0.01);
        let (value, derivative) = alpha.eval(phi).unwrap();
        let sol = solve_qp(&m, phi, c).unwrap();
        prop_assert!((value - sol.value).abs() <= 1e-9 * (1.0 + value.abs()));
        prop_assert!((derivative - sol.derivative).abs() <= 1e-8);
        for w in alpha.pieces().windows(2) {
            prop_assert!(w[0].active_set != w[1].active_set || w[0].budget_active != w[1].budget_active);
            prop_assert!((w[0].value(w[0].hi) - w[1].value(w[0].hi)).abs() <= 1e-9);
        }
        for p in alpha.pieces() {
            // each piece is -b / phi + ... with b >= 0, so alpha is concave
            prop_assert!(p.b >= -1e-12);
        }
    }

    #[test]
    fn inverse_round_trips(m in model(), t in 0.0f64..1.0) {
        let alpha = PiecewiseAlpha::build(&m, 0.01, 20.0, ConstraintSet::Simplex).unwrap();
        let phi = 0.01 + t * (20.0 - 0.01);
        let (z, _) = alpha.eval(phi).unwrap();
        let back = alpha.inverse(z).unwrap();
        prop_assert!((alpha.eval(back).unwrap().0 - z).abs() <= 1e-12 * (1.0 + z.abs()));
        prop_assert!((back - phi).abs() <= 1e-8 * (1.0 + phi));
    }
}

#[test]
fn six_asset_pieces_are_concave_and_envelope_consistent() {
    let alpha = PiecewiseAlpha::build(&six_asset_model(), 0.01, 9.0, ConstraintSet::Simplex).unwrap();
    let mut prev = f64::INFINITY;
    for k in 1..2000 {
        let phi = 0.01 + (9.0 - 0.01) * k as f64 / 2000.0;
        let (_, d) = alpha.eval(phi).unwrap();
        // alpha' is non-increasing
        assert!(d <= prev + 1e-12);
        prev = d;
        if alpha.is_smooth_at(phi, 1e-4) {
            let step = 1e-6;
            let fd = (alpha.eval(phi + step).unwrap().0 - alpha.eval(phi - step).unwrap().0) / (2.0 * step);
            assert!((fd - d).abs() < 1e-6);
        }
    }
}
