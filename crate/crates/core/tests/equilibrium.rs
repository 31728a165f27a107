mod common;

use common::{random_stable_strategy, random_weights, random_world, rng};
use frugal_core::equilibrium::{self, EquilibriumError};
use frugal_core::matrixkit::Matrix;
use frugal_core::simlab;
use frugal_core::{CostWeights, Strategy, WorldModel};
use proptest::prelude::*;
use rand::Rng;

/// Analytic and finite-difference gradients agree on randomized instances.
#[test]
fn gradient_matches_finite_differences_on_fifty_instances() {
    let mut r = rng(2024);
    for case in 0..50 {
        let n = r.random_range(1..=3);
        let m = r.random_range(1..=2);
        let w = random_world(n, m, &mut r);
        let c_b = r.random_range(0.0..4.0);
        let c = random_weights(n, m, c_b, &mut r);
        let s = random_stable_strategy(&w, &c, &mut r);
        let (_, g) = equilibrium::loss_gradient(&w, &c, &s).unwrap();
        let fd = equilibrium::finite_difference_gradient(&w, &c, &s, 1e-6).unwrap();
        let (a, b) = (g.to_params(), fd.to_params());
        let diff: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(diff <= 1e-4 * scale.max(1e-3), "case {case}: |Δ| = {diff:e}, |g| = {scale:e}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn equilibrium_invariants(seed in any::<u64>(), n in 1usize..4, m in 1usize..3) {
        let mut r = rng(seed);
        let w = random_world(n, m, &mut r);
        let c = random_weights(n, m, 1.0, &mut r);
        let s = random_stable_strategy(&w, &c, &mut r);
        let rep = equilibrium::steady_state(&w, &c, &s).unwrap();
        let sigma = &rep.sigma;
        prop_assert!(frugal_core::matrixkit::max_asymmetry(sigma) < 1e-10 * (1.0 + sigma.norm()));
        prop_assert!(frugal_core::matrixkit::min_eigenvalue(sigma).unwrap() > -1e-10);
        prop_assert!(rep.information_bits >= 0.0);
        let total = rep.state_cost + rep.action_cost + c.c_b * rep.information_bits;
        prop_assert!((rep.total_loss - total).abs() <= 1e-12 * (1.0 + total.abs()));

        // Doubling C_a doubles the action cost and nothing else.
        let heavier = CostWeights::new(c.c_s.clone(), &c.c_a * 2.0, c.c_b).unwrap();
        let rep2 = equilibrium::steady_state(&w, &heavier, &s).unwrap();
        prop_assert!((rep2.action_cost - 2.0 * rep.action_cost).abs() < 1e-10 * (1.0 + rep.action_cost));
        prop_assert_eq!(&rep2.sigma, &rep.sigma);
        prop_assert_eq!(rep2.state_cost, rep.state_cost);
        prop_assert_eq!(rep2.information_bits, rep.information_bits);
    }

    /// A strategy that ignores observations carries no information.
    #[test]
    fn deaf_strategies_carry_no_information(seed in any::<u64>(), phi in -0.9f64..0.9) {
        let mut r = rng(seed);
        let w = WorldModel::scalar(r.random_range(-0.9..0.9), 1.0, 1.0, 1.0).unwrap();
        let c = CostWeights::scalar(1.0, 0.1, 1.0).unwrap();
        let s = Strategy::new(Matrix::from_element(1, 1, phi), Matrix::zeros(1, 1)).unwrap();
        // Σ_a is zero, so the information term is undefined rather than zero;
        // the report must refuse instead of inventing a number.
        match equilibrium::steady_state(&w, &c, &s) {
            Ok(rep) => prop_assert_eq!(rep.information_bits, 0.0),
            Err(EquilibriumError::DegenerateCovariance) => {}
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }
}

#[test]
fn unstable_strategy_reported() {
    let w = WorldModel::scalar(1.2, 1.0, 1.0, 1.0).unwrap();
    let c = CostWeights::scalar(1.0, 0.1, 1.0).unwrap();
    let s = Strategy::new(Matrix::from_element(1, 1, 0.0), Matrix::from_element(1, 1, 0.5)).unwrap();
    assert!(matches!(
        equilibrium::steady_state(&w, &c, &s),
        Err(EquilibriumError::UnstableStrategy { spectral_radius }) if spectral_radius > 1.0
    ));
}

/// Gaussian information of a bivariate normal with correlation ρ is
/// `−½ log₂(1 − ρ²)`.
#[test]
fn information_of_bivariate_normal() {
    for rho in [0.0, 0.3, 0.6, 0.9, 0.99] {
        // Standard deviations 2 and 0.5.
        let sigma = Matrix::from_row_slice(2, 2, &[4.0, rho, rho, 0.25]);
        let bits = equilibrium::information_bits(&sigma, 1).unwrap();
        let expected = -0.5 * (1.0 - rho * rho).log2();
        assert!((bits - expected).abs() < 1e-12, "rho {rho}: {bits} vs {expected}");
    }
}

/// Time-averaged costs of long rollouts agree with the equilibrium values.
#[test]
fn equilibrium_costs_match_simulation() {
    let mut r = rng(77);
    for _ in 0..3 {
        let w = random_world(2, 1, &mut r);
        let c = random_weights(2, 1, 1.0, &mut r);
        let s = random_stable_strategy(&w, &c, &mut r);
        let rep = equilibrium::steady_state(&w, &c, &s).unwrap();
        let est = simlab::empirical_costs(&w, &c, &s, 20, 20_000, 500, 9).unwrap();
        assert!(est.state_cost.covers(rep.state_cost, 3.0), "{:?} vs {}", est.state_cost, rep.state_cost);
        assert!(est.action_cost.covers(rep.action_cost, 3.0));
        // The plug-in information estimate has an O(1/T) bias far below its
        // spread at this length.
        assert!(est.information_bits.covers(rep.information_bits, 3.0));
    }
}
