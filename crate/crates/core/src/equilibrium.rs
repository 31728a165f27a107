//! Closed-loop equilibrium of a strategy and its loss.
//!
//! With `z_t = [s_t; a_t]` the closed loop is `z_t = M z_{t−1} + η_{t−1}`:
//!
//! ```text
//! M = [ D     E       ]      Υ = [ Q     QΨᵀ        ]
//!     [ ΨD    Φ + ΨE  ]          [ ΨQ    Ψ(Q + R)Ψᵀ ]
//! ```
//!
//! and the stationary covariance solves `Σ = MΣMᵀ + Υ`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrixkit::{self, Matrix, MatrixError};
use crate::model::{self, rows, CostWeights, ModelError, Strategy, WorldModel};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EquilibriumError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("strategy is not stabilizing (spectral radius {spectral_radius})")]
    UnstableStrategy { spectral_radius: f64 },
    #[error("equilibrium covariance is degenerate")]
    DegenerateCovariance,
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

impl From<ModelError> for EquilibriumError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Matrix(m) => Self::Matrix(m),
            other => Self::DimensionMismatch(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, EquilibriumError>;

/// Spectral radius at or above this is treated as unstable.
pub const STABILITY_LIMIT: f64 = 1.0 - 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSystem {
    pub m: Matrix,
    pub upsilon: Matrix,
}

pub fn build_augmented(world: &WorldModel, s: &Strategy) -> Result<AugmentedSystem> {
    s.check_world(world)?;
    let n = world.n();
    let k = world.m();
    let (d, e, q, r) = (&world.d, &world.e, &world.q, &world.r);
    let (phi, psi) = (&s.phi, &s.psi);

    let mut m = Matrix::zeros(n + k, n + k);
    m.view_mut((0, 0), (n, n)).copy_from(d);
    m.view_mut((0, n), (n, k)).copy_from(e);
    m.view_mut((n, 0), (k, n)).copy_from(&(psi * d));
    m.view_mut((n, n), (k, k)).copy_from(&(phi + psi * e));

    let q_psi_t = q * psi.transpose();
    let mut upsilon = Matrix::zeros(n + k, n + k);
    upsilon.view_mut((0, 0), (n, n)).copy_from(q);
    upsilon.view_mut((0, n), (n, k)).copy_from(&q_psi_t);
    upsilon.view_mut((n, 0), (k, n)).copy_from(&q_psi_t.transpose());
    upsilon
        .view_mut((n, n), (k, k))
        .copy_from(&(psi * (q + r) * psi.transpose()));
    Ok(AugmentedSystem {
        m,
        upsilon: matrixkit::symmetrize(&upsilon),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    #[serde(rename = "Sigma", with = "rows")]
    pub sigma: Matrix,
    pub n: usize,
    pub state_cost: f64,
    pub action_cost: f64,
    pub information_bits: f64,
    pub total_loss: f64,
    pub spectral_radius: f64,
}

impl EquilibriumReport {
    pub fn sigma_s(&self) -> Matrix {
        model::blocks(&self.sigma, self.n).0
    }

    pub fn sigma_sa(&self) -> Matrix {
        model::blocks(&self.sigma, self.n).1
    }

    pub fn sigma_a(&self) -> Matrix {
        model::blocks(&self.sigma, self.n).2
    }

    pub fn information_cost(&self, weights: &CostWeights) -> f64 {
        weights.c_b * self.information_bits
    }
}

/// Gaussian mutual information in bits between the state and action blocks of
/// a joint covariance.
pub fn information_bits(sigma: &Matrix, n: usize) -> Result<f64> {
    let (s, _, a) = model::blocks(sigma, n);
    let ld = |m: &Matrix| matrixkit::log_det_spd(m).ok_or(EquilibriumError::DegenerateCovariance);
    let (ls, la, lj) = (ld(&s)?, ld(&a)?, ld(sigma)?);
    if lj < (1e-300f64).ln() {
        return Err(EquilibriumError::DegenerateCovariance);
    }
    // Rounding can push an exactly-zero value slightly negative.
    Ok((0.5 * (ls + la - lj) / std::f64::consts::LN_2).max(0.0))
}

pub fn steady_state(world: &WorldModel, weights: &CostWeights, s: &Strategy) -> Result<EquilibriumReport> {
    weights.check_world(world)?;
    let aug = build_augmented(world, s)?;
    let rho = matrixkit::spectral_radius(&aug.m)?;
    if !(rho < STABILITY_LIMIT) {
        return Err(EquilibriumError::UnstableStrategy { spectral_radius: rho });
    }
    let sigma = matrixkit::solve_dlyap(&aug.m, &aug.upsilon)?;
    let n = world.n();
    let (sigma_s, sigma_sa, sigma_a) = model::blocks(&sigma, n);
    let state_cost = (&weights.c_s * &sigma_s).trace();
    let action_cost = (&weights.c_a * &sigma_a).trace();
    let information_bits = if sigma_sa.iter().all(|&v| v == 0.0) {
        if matrixkit::log_det_spd(&sigma_s).is_none() {
            return Err(EquilibriumError::DegenerateCovariance);
        }
        0.0
    } else {
        information_bits(&sigma, n)?
    };
    Ok(EquilibriumReport {
        sigma,
        n,
        state_cost,
        action_cost,
        information_bits,
        total_loss: state_cost + action_cost + weights.c_b * information_bits,
        spectral_radius: rho,
    })
}

/// Loss gradient with respect to the strategy parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub phi: Matrix,
    pub psi: Matrix,
}

impl Gradient {
    pub fn norm(&self) -> f64 {
        (self.phi.norm_squared() + self.psi.norm_squared()).sqrt()
    }

    /// Same layout as [`Strategy::to_params`].
    pub fn to_params(&self) -> Vec<f64> {
        Strategy {
            phi: self.phi.clone(),
            psi: self.psi.clone(),
        }
        .to_params()
    }
}

/// `∂ℓ/∂Σ` for the equilibrium loss.
fn loss_sensitivity(weights: &CostWeights, sigma: &Matrix, n: usize) -> Result<Matrix> {
    let k = sigma.nrows() - n;
    let (sigma_s, _, sigma_a) = model::blocks(sigma, n);
    let c = weights.c_b / (2.0 * std::f64::consts::LN_2);
    let mut g = Matrix::zeros(n + k, n + k);
    g.view_mut((0, 0), (n, n))
        .copy_from(&matrixkit::symmetrize(&weights.c_s));
    g.view_mut((n, n), (k, k))
        .copy_from(&matrixkit::symmetrize(&weights.c_a));
    if c != 0.0 {
        let inv = |m: &Matrix| {
            matrixkit::symmetrize(m)
                .cholesky()
                .map(|ch| ch.inverse())
                .ok_or(EquilibriumError::DegenerateCovariance)
        };
        let mut info = Matrix::zeros(n + k, n + k);
        info.view_mut((0, 0), (n, n)).copy_from(&inv(&sigma_s)?);
        info.view_mut((n, n), (k, k)).copy_from(&inv(&sigma_a)?);
        info -= inv(sigma)?;
        g += info * c;
    }
    Ok(g)
}

/// Analytic gradient via one adjoint Lyapunov solve `Λ = MᵀΛM + ∂ℓ/∂Σ`.
pub fn loss_gradient(world: &WorldModel, weights: &CostWeights, s: &Strategy) -> Result<(EquilibriumReport, Gradient)> {
    let report = steady_state(world, weights, s)?;
    let aug = build_augmented(world, s)?;
    let n = world.n();
    let k = world.m();
    let g = loss_sensitivity(weights, &report.sigma, n)?;
    let lambda = matrixkit::solve_dlyap_adjoint(&aug.m, &g)?;
    let t = (&lambda * &aug.m * &report.sigma) * 2.0;
    let t_as = t.view((n, 0), (k, n)).into_owned();
    let t_aa = t.view((n, n), (k, k)).into_owned();
    let l_as = lambda.view((n, 0), (k, n)).into_owned();
    let l_aa = lambda.view((n, n), (k, k)).into_owned();
    let l_aa_psi = &l_aa * &s.psi;
    let d_psi = &t_as * world.d.transpose()
        + &t_aa * world.e.transpose()
        + ((&l_as + &l_aa_psi) * &world.q + &l_aa_psi * &world.r) * 2.0;
    Ok((report, Gradient { phi: t_aa, psi: d_psi }))
}

/// Central finite-difference gradient of the total loss.
pub fn finite_difference_gradient(world: &WorldModel, weights: &CostWeights, s: &Strategy, step: f64) -> Result<Gradient> {
    let (n, m) = (world.n(), world.m());
    let base = s.to_params();
    let mut grad = vec![0.0; base.len()];
    for (i, g) in grad.iter_mut().enumerate() {
        let mut plus = base.clone();
        let mut minus = base.clone();
        plus[i] += step;
        minus[i] -= step;
        let lp = steady_state(world, weights, &Strategy::from_params(&plus, n, m))?.total_loss;
        let lm = steady_state(world, weights, &Strategy::from_params(&minus, n, m))?.total_loss;
        *g = (lp - lm) / (2.0 * step);
    }
    let s = Strategy::from_params(&grad, n, m);
    Ok(Gradient { phi: s.phi, psi: s.psi })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn one(v: f64) -> Matrix {
        Matrix::from_element(1, 1, v)
    }

    #[test]
    fn deaf_controller_blocks() {
        let w = WorldModel::scalar(0.8, 1.0, 0.5, 2.0).unwrap();
        let s = Strategy::new(one(0.3), one(0.0)).unwrap();
        let aug = build_augmented(&w, &s).unwrap();
        assert_eq!(aug.m, Matrix::from_row_slice(2, 2, &[0.8, 1.0, 0.0, 0.3]));
        assert_eq!(aug.upsilon, Matrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.0]));
        let z = Strategy::zeros(1, 1);
        let aug = build_augmented(&w, &z).unwrap();
        assert_eq!(aug.m[(1, 0)], 0.0);
        assert_eq!(aug.m[(1, 1)], 0.0);
    }

    #[test]
    fn scalar_substitution() {
        let (d, e, phi, psi) = (1.1, 0.7, 0.2, -0.4);
        let w = WorldModel::scalar(d, e, 1.0, 1.0).unwrap();
        let s = Strategy::new(one(phi), one(psi)).unwrap();
        let aug = build_augmented(&w, &s).unwrap();
        let expect = Matrix::from_row_slice(2, 2, &[d, e, d * psi, phi + e * psi]);
        assert_relative_eq!(aug.m, expect, epsilon = 1e-15);
    }

    #[test]
    fn zero_strategy_has_no_information() {
        let w = WorldModel::scalar(0.8, 1.0, 1.0, 1.0).unwrap();
        let c = CostWeights::scalar(1.0, 0.1, 3.0).unwrap();
        let r = steady_state(&w, &c, &Strategy::zeros(1, 1)).unwrap();
        assert_eq!(r.sigma_sa()[(0, 0)], 0.0);
        assert_eq!(r.information_bits, 0.0);
        assert_eq!(r.action_cost, 0.0);
    }

    #[test]
    fn information_of_correlated_pair() {
        // ρ² = 0.75 ⇒ −½ log₂(0.25) = 1 bit.
        let rho = 0.75f64.sqrt();
        let sigma = Matrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]);
        assert_relative_eq!(information_bits(&sigma, 1).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn unstable_strategy_rejected() {
        let w = WorldModel::scalar(1.2, 1.0, 1.0, 1.0).unwrap();
        let c = CostWeights::scalar(1.0, 0.1, 0.0).unwrap();
        let s = Strategy::new(one(0.0), one(0.0)).unwrap();
        assert!(matches!(
            steady_state(&w, &c, &s),
            Err(EquilibriumError::UnstableStrategy { .. })
        ));
    }

    #[test]
    fn loss_decomposition() {
        let w = WorldModel::scalar(1.2, 1.0, 1.0, 1.0).unwrap();
        let c = CostWeights::scalar(1.0, 0.1, 2.0).unwrap();
        let s = Strategy::new(one(0.1), one(-0.8)).unwrap();
        let r = steady_state(&w, &c, &s).unwrap();
        assert_relative_eq!(r.total_loss, r.state_cost + r.action_cost + 2.0 * r.information_bits, epsilon = 1e-12);
        assert!(r.information_bits > 0.0);
        let resid = &r.sigma - &build_augmented(&w, &s).unwrap().m * &r.sigma * build_augmented(&w, &s).unwrap().m.transpose()
            - build_augmented(&w, &s).unwrap().upsilon;
        assert!(resid.norm() < 1e-9);
    }

    #[test]
    fn gradient_matches_finite_differences_scalar() {
        let w = WorldModel::scalar(1.2, 1.0, 1.0, 1.0).unwrap();
        for c_b in [0.0, 1.5] {
            let c = CostWeights::scalar(1.0, 0.1, c_b).unwrap();
            let s = Strategy::new(one(0.1), one(-0.8)).unwrap();
            let (_, g) = loss_gradient(&w, &c, &s).unwrap();
            let fd = finite_difference_gradient(&w, &c, &s, 1e-6).unwrap();
            assert_relative_eq!(g.phi[(0, 0)], fd.phi[(0, 0)], max_relative = 1e-6);
            assert_relative_eq!(g.psi[(0, 0)], fd.psi[(0, 0)], max_relative = 1e-6);
        }
    }
}
