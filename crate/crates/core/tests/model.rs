mod common;

use common::{rng, uniform};
use frugal_core::matrixkit::Matrix;
use frugal_core::model::{self, FilterForm};
use frugal_core::{equilibrium, CostWeights, Strategy, WorldModel};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// The controller and filter forms describe the same strategy.
    #[test]
    fn filter_round_trip(seed in any::<u64>(), n in 1usize..4) {
        let mut r = rng(seed);
        let gain = uniform(n, n, 1.0, &mut r) + Matrix::identity(n, n) * 2.0;
        let f = FilterForm {
            gamma: uniform(n, n, 0.5, &mut r),
            beta: uniform(n, n, 0.5, &mut r),
            gain: gain.clone(),
            readout: gain.clone().try_inverse().unwrap(),
        };
        let s = model::strategy_from_filter(&f).unwrap();
        let back_gamma = f.readout.clone() * &s.phi * &gain;
        let back_beta = &f.readout * &s.psi;
        prop_assert!((back_gamma - &f.gamma).norm() < 1e-9 * (1.0 + f.gamma.norm()));
        prop_assert!((back_beta - &f.beta).norm() < 1e-9 * (1.0 + f.beta.norm()));
    }

    #[test]
    fn params_round_trip(seed in any::<u64>(), n in 1usize..5, m in 1usize..4) {
        let mut r = rng(seed);
        let s = Strategy::new(uniform(m, m, 1.0, &mut r), uniform(m, n, 1.0, &mut r)).unwrap();
        prop_assert_eq!(Strategy::from_params(&s.to_params(), n, m), s);
    }

    /// Rescaling the internal state by any invertible A leaves the strategy
    /// unchanged: `(Γ, β, L) → (AΓA⁻¹, Aβ, LA⁻¹)`.
    #[test]
    fn joint_rescaling_is_invisible(seed in any::<u64>(), n in 1usize..4) {
        let mut r = rng(seed);
        let gain = uniform(n, n, 1.0, &mut r) + Matrix::identity(n, n) * 2.0;
        let f = FilterForm {
            gamma: uniform(n, n, 0.5, &mut r),
            beta: uniform(n, n, 0.5, &mut r),
            gain: gain.clone(),
            readout: gain.clone().try_inverse().unwrap(),
        };
        let a = uniform(n, n, 0.5, &mut r) + Matrix::identity(n, n) * 1.5;
        let a_inv = a.clone().try_inverse().unwrap();
        let g = FilterForm {
            gamma: &a * &f.gamma * &a_inv,
            beta: &a * &f.beta,
            gain: &f.gain * &a_inv,
            readout: &a * &f.readout,
        };
        let (s1, s2) = (model::strategy_from_filter(&f).unwrap(), model::strategy_from_filter(&g).unwrap());
        prop_assert!((&s1.phi - &s2.phi).norm() < 1e-8 * (1.0 + s1.phi.norm()));
        prop_assert!((&s1.psi - &s2.psi).norm() < 1e-8 * (1.0 + s1.psi.norm()));
    }
}

#[test]
fn world_serializes_with_matrix_names() {
    let w = WorldModel::scalar(1.2, 1.0, 1.0, 0.5).unwrap();
    let json = serde_json::to_value(&w).unwrap();
    assert_eq!(json["D"], serde_json::json!([[1.2]]));
    assert_eq!(json["R"], serde_json::json!([[0.5]]));
    let back: WorldModel = serde_json::from_value(json).unwrap();
    assert_eq!(back, w);
}

#[test]
fn invalid_inputs_rejected() {
    assert!(WorldModel::new(
        Matrix::identity(2, 2),
        Matrix::zeros(3, 1),
        Matrix::identity(2, 2),
        Matrix::identity(2, 2)
    )
    .is_err());
    assert!(WorldModel::scalar(1.0, 1.0, -1.0, 1.0).is_err());
    assert!(CostWeights::scalar(1.0, 0.0, 1.0).is_err());
    assert!(CostWeights::scalar(1.0, 0.1, -1.0).is_err());
}

/// The steady-state Kalman recursion in closed form for a scalar world:
/// `p = d²(1 − k)p + q` with `k = p/(p + r)`.
#[test]
fn scalar_kalman_closed_form() {
    let (d, q, r) = (1.2f64, 1.0, 1.0);
    let w = WorldModel::scalar(d, 1.0, q, r).unwrap();
    let k = w.kalman().unwrap();
    // p² + (r − d²r − q)p − qr = 0
    let b = r - d * d * r - q;
    let p = (-b + (b * b + 4.0 * q * r).sqrt()) / 2.0;
    assert!((k.prior[(0, 0)] - p).abs() < 1e-10);
    assert!((k.gain[(0, 0)] - p / (p + r)).abs() < 1e-10);
    assert!((k.posterior[(0, 0)] - p * r / (p + r)).abs() < 1e-10);
}

/// A subjective model equal to the world runs the Kalman filter.
#[test]
fn filter_step_with_true_model_is_kalman() {
    let w = WorldModel::scalar(0.9, 1.0, 1.0, 1.0).unwrap();
    let kal = w.kalman().unwrap();
    let sm = model::SubjectiveModel {
        dtil: w.d.clone(),
        etil: w.e.clone(),
        qtil: w.q.clone(),
        rtil: w.r.clone(),
    };
    let b = model::Belief::new(nalgebra::DVector::from_vec(vec![0.3]), kal.posterior.clone()).unwrap();
    let a = nalgebra::DVector::from_vec(vec![0.2]);
    let o = nalgebra::DVector::from_vec(vec![1.0]);
    let next = sm.filter_step(&b, &a, &o, &kal.gain);
    let pred = 0.9 * 0.3 + 0.2;
    let g = kal.gain[(0, 0)];
    assert!((next.mean[0] - (pred + g * (1.0 - pred))).abs() < 1e-12);
    assert!((next.covariance[(0, 0)] - kal.posterior[(0, 0)]).abs() < 1e-9);
}

#[test]
fn filter_from_equilibrium_reproduces_strategy() {
    let w = WorldModel::scalar(1.2, 1.0, 1.0, 1.0).unwrap();
    let c = CostWeights::scalar(1.0, 0.1, 1.0).unwrap();
    let s = Strategy::new(Matrix::from_element(1, 1, 0.2), Matrix::from_element(1, 1, -0.8)).unwrap();
    let rep = equilibrium::steady_state(&w, &c, &s).unwrap();
    let f = model::filter_from_strategy(&s, &rep.sigma).unwrap();
    let back = model::strategy_from_filter(&f).unwrap();
    assert!((back.phi - s.phi).norm() < 1e-12);
    assert!((back.psi - s.psi).norm() < 1e-12);
}
