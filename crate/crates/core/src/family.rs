//! The family of strategies sharing one equilibrium covariance.
//!
//! Fixing Σ and eliminating Ψ leaves a quadratic matrix equation in Φ,
//!
//! ```text
//! Φ F₂ Φᵀ + Φ F₁ + F₁ᵀ Φᵀ = F₀,
//! ```
//!
//! whose completed square `(Φ + F₁ᵀF₂⁻¹) F₂ (Φ + F₁ᵀF₂⁻¹)ᵀ = ξ` is solved by
//! `Φ = ξ^{½} Θ F₂^{−½} − F₁ᵀF₂⁻¹` for any orthogonal Θ. When ξ = 0 the
//! solution is unique; otherwise every Θ gives an equally good strategy.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::equilibrium::{self, EquilibriumError, EquilibriumReport};
use crate::matrixkit::{self, Matrix, MatrixError};
use crate::model::{self, rows, CostWeights, ModelError, Strategy, WorldModel};
use crate::optimizer::SolveResult;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FamilyError {
    #[error("state covariance is singular")]
    SingularStateCovariance,
    #[error("quadratic form is not positive definite (min eigenvalue of F2 {f2_min_eig}, of R − Σ_s {r_gap_min_eig})")]
    ConstraintViolated { f2_min_eig: f64, r_gap_min_eig: f64 },
    #[error("Theta is not orthogonal (deviation {0})")]
    NotOrthogonal(f64),
    #[error("xi has a negative eigenvalue {0}")]
    NegativeEigenvalue(f64),
    #[error("seed solution did not converge")]
    SeedNotConverged,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

impl From<ModelError> for FamilyError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Matrix(m) => Self::Matrix(m),
            other => Self::DimensionMismatch(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, FamilyError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Lossless,
    Lossy,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::Lossless => "lossless",
            Regime::Lossy => "lossy",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticFormData {
    #[serde(rename = "F0", with = "rows")]
    pub f0: Matrix,
    #[serde(rename = "F1", with = "rows")]
    pub f1: Matrix,
    #[serde(rename = "F2", with = "rows")]
    pub f2: Matrix,
    #[serde(rename = "xi", with = "rows")]
    pub xi: Matrix,
    /// Smallest eigenvalue of `R − Σ_s`, kept as a diagnostic.
    pub r_gap_min_eig: f64,
}

impl QuadraticFormData {
    pub fn xi_norm(&self) -> f64 {
        self.xi.norm()
    }

    /// `‖ΦF₂Φᵀ + ΦF₁ + F₁ᵀΦᵀ − F₀‖_F`.
    pub fn constraint_residual(&self, phi: &Matrix) -> f64 {
        (phi * &self.f2 * phi.transpose() + phi * &self.f1 + self.f1.transpose() * phi.transpose() - &self.f0).norm()
    }

    /// `F₁ᵀF₂⁻¹`.
    pub fn shift(&self) -> Matrix {
        // F₁ᵀF₂⁻¹ = (F₂⁻¹F₁)ᵀ with F₂ symmetric.
        self.f2
            .clone()
            .cholesky()
            .expect("F2 checked positive definite")
            .solve(&self.f1)
            .transpose()
    }
}

pub fn quadratic_form_data(world: &WorldModel, sigma: &Matrix) -> Result<QuadraticFormData> {
    let n = world.n();
    let m = world.m();
    if sigma.shape() != (n + m, n + m) {
        return Err(FamilyError::DimensionMismatch(format!(
            "Sigma must be {0}x{0}, got {1}x{2}",
            n + m,
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    let (sigma_s, sigma_sa, sigma_a) = model::blocks(sigma, n);
    let chol = matrixkit::symmetrize(&sigma_s)
        .cholesky()
        .ok_or(FamilyError::SingularStateCovariance)?;
    let sigma_s_inv = chol.inverse();
    let sa_t = sigma_sa.transpose();
    let a = &sa_t * &sigma_s_inv;
    let b = (&sa_t * world.d.transpose() + &sigma_a * world.e.transpose()) * &sigma_s_inv;
    let w = &world.r - &sigma_s;
    let f2 = matrixkit::symmetrize(&(&sigma_a + &b * &w * b.transpose()));
    let f1 = -(&b * (&sigma_sa + &w * a.transpose()));
    let f0 = matrixkit::symmetrize(&(&sigma_a - &a * &sigma_sa - &sa_t * a.transpose() - &a * &w * a.transpose()));
    let r_gap_min_eig = matrixkit::min_eigenvalue(&matrixkit::symmetrize(&w))?;
    let f2_min_eig = matrixkit::min_eigenvalue(&f2)?;
    let Some(chol_f2) = f2.clone().cholesky().filter(|_| f2_min_eig > 0.0) else {
        return Err(FamilyError::ConstraintViolated { f2_min_eig, r_gap_min_eig });
    };
    let xi = matrixkit::symmetrize(&(&f0 + f1.transpose() * chol_f2.solve(&f1)));
    Ok(QuadraticFormData {
        f0,
        f1,
        f2,
        xi,
        r_gap_min_eig,
    })
}

/// Default ξ threshold `1e-6·(1 + ‖F₀‖)`.
pub fn default_regime_tol(q: &QuadraticFormData) -> f64 {
    1e-6 * (1.0 + q.f0.norm())
}

pub fn classify_regime(q: &QuadraticFormData, tol: f64) -> Regime {
    if q.xi.norm() < tol {
        Regime::Lossless
    } else {
        Regime::Lossy
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyMember {
    #[serde(rename = "Theta", with = "rows")]
    pub theta: Matrix,
    pub strategy: Strategy,
}

fn orthogonality_defect(theta: &Matrix) -> f64 {
    let k = theta.nrows();
    (theta.transpose() * theta - Matrix::identity(k, k)).norm()
}

/// `ξ^{½}` as `U_ξ Λ_ξ^{½}` with small negative eigenvalues clamped to zero.
fn xi_factor(xi: &Matrix) -> Result<Matrix> {
    let eig = matrixkit::sym_eig(xi)?;
    let floor = -1e-8 * (1.0 + xi.norm());
    let mut f = eig.eigenvectors.clone();
    for (i, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam < floor {
            return Err(FamilyError::NegativeEigenvalue(lam));
        }
        let root = lam.max(0.0).sqrt();
        f.column_mut(i).scale_mut(root);
    }
    Ok(f)
}

/// `Λ_F₂^{−½} U_F₂ᵀ` and its inverse `U_F₂ Λ_F₂^{½}`.
fn f2_factors(f2: &Matrix) -> Result<(Matrix, Matrix)> {
    let eig = matrixkit::sym_eig(f2)?;
    let mut inv_half = eig.eigenvectors.transpose();
    let mut half = eig.eigenvectors.clone();
    for (i, &lam) in eig.eigenvalues.iter().enumerate() {
        inv_half.row_mut(i).scale_mut(1.0 / lam.sqrt());
        half.column_mut(i).scale_mut(lam.sqrt());
    }
    Ok((inv_half, half))
}

/// Family member for a given orthogonal Θ.
pub fn member(world: &WorldModel, sigma: &Matrix, q: &QuadraticFormData, theta: &Matrix) -> Result<FamilyMember> {
    let m = world.m();
    if theta.shape() != (m, m) {
        return Err(FamilyError::DimensionMismatch(format!("Theta must be {m}x{m}")));
    }
    let defect = orthogonality_defect(theta);
    if !(defect < 1e-10) {
        return Err(FamilyError::NotOrthogonal(defect));
    }
    let (inv_half, _) = f2_factors(&q.f2)?;
    let phi = xi_factor(&q.xi)? * theta * inv_half - q.shift();
    let psi = psi_for_phi(world, sigma, &phi)?;
    Ok(FamilyMember {
        theta: theta.clone(),
        strategy: Strategy { phi, psi },
    })
}

/// `Ψ = (Σ_saᵀ − Φ(Σ_saᵀDᵀ + Σ_aEᵀ)) Σ_s⁻¹`.
pub fn psi_for_phi(world: &WorldModel, sigma: &Matrix, phi: &Matrix) -> Result<Matrix> {
    let (sigma_s, sigma_sa, sigma_a) = model::blocks(sigma, world.n());
    let sa_t = sigma_sa.transpose();
    let rhs = &sa_t - phi * (&sa_t * world.d.transpose() + &sigma_a * world.e.transpose());
    let chol = matrixkit::symmetrize(&sigma_s)
        .cholesky()
        .ok_or(FamilyError::SingularStateCovariance)?;
    // X Σ_s = rhs ⇔ Σ_s Xᵀ = rhsᵀ
    Ok(chol.solve(&rhs.transpose()).transpose())
}

/// The Θ that reproduces a given Φ, projected onto the orthogonal group.
///
/// Directions where ξ vanishes carry no freedom; there the projection picks
/// the identity-aligned completion.
pub fn theta_of(q: &QuadraticFormData, phi: &Matrix) -> Result<Matrix> {
    let (_, half) = f2_factors(&q.f2)?;
    let target = (phi + q.shift()) * half;
    let xf = xi_factor(&q.xi)?;
    let raw = matrixkit::pinv(&xf) * target;
    let svd = raw.svd(true, true);
    let u = svd.u.ok_or(MatrixError::Singular)?;
    let v_t = svd.v_t.ok_or(MatrixError::Singular)?;
    Ok(u * v_t)
}

/// Θ samples: `±1` for one action, rotations at evenly spaced angles followed
/// by the same rotations composed with a reflection for two, and Haar-random
/// orthogonal matrices beyond that.
pub fn theta_samples(m: usize, count: usize, seed: u64) -> Vec<Matrix> {
    match m {
        1 => vec![Matrix::from_element(1, 1, 1.0), Matrix::from_element(1, 1, -1.0)],
        2 => {
            let rotations = count.div_ceil(2).max(1);
            let reflect = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
            (0..count)
                .map(|i| {
                    let angle = 2.0 * std::f64::consts::PI * (i % rotations) as f64 / rotations as f64;
                    let (s, c) = angle.sin_cos();
                    let rot = Matrix::from_row_slice(2, 2, &[c, -s, s, c]);
                    if i < rotations {
                        rot
                    } else {
                        rot * &reflect
                    }
                })
                .collect()
        }
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..count).map(|_| random_orthogonal(m, &mut rng)).collect()
        }
    }
}

fn random_orthogonal(m: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let g = Matrix::from_fn(m, m, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..m {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidatedMember {
    #[serde(flatten)]
    pub member: FamilyMember,
    pub report: EquilibriumReport,
    /// `‖Σ_member − Σ_seed‖_F / ‖Σ_seed‖_F`.
    pub sigma_rel_error: f64,
    pub constraint_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedTheta {
    #[serde(rename = "Theta", with = "rows")]
    pub theta: Matrix,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Family {
    pub regime: Regime,
    pub quadratic: QuadraticFormData,
    pub members: Vec<ValidatedMember>,
    pub rejected: Vec<RejectedTheta>,
}

/// Σ mismatch above which a generated member is rejected.
pub const SIGMA_MATCH_TOL: f64 = 1e-6;

/// Generates and validates family members around a converged seed.
///
/// With one action the family has one member (lossless) or two (lossy). With
/// more, `count` Θ samples are drawn; members that are unstable or do not
/// reproduce the seed Σ are listed in `rejected`.
pub fn enumerate_family(
    world: &WorldModel,
    weights: &CostWeights,
    seed: &SolveResult,
    count: usize,
    rng_seed: u64,
) -> Result<Family> {
    if !seed.converged {
        return Err(FamilyError::SeedNotConverged);
    }
    let sigma = &seed.report.sigma;
    let q = quadratic_form_data(world, sigma)?;
    let regime = classify_regime(&q, default_regime_tol(&q));
    let m = world.m();
    let thetas = match (m, regime) {
        (1, Regime::Lossless) => vec![Matrix::from_element(1, 1, 1.0)],
        _ => theta_samples(m, count, rng_seed),
    };
    let mut members = Vec::new();
    let mut rejected = Vec::new();
    for theta in thetas {
        match validate(world, weights, sigma, &q, &theta) {
            Ok(v) => members.push(v),
            Err(reason) => rejected.push(RejectedTheta { theta, reason }),
        }
    }
    Ok(Family {
        regime,
        quadratic: q,
        members,
        rejected,
    })
}

fn validate(
    world: &WorldModel,
    weights: &CostWeights,
    sigma: &Matrix,
    q: &QuadraticFormData,
    theta: &Matrix,
) -> std::result::Result<ValidatedMember, String> {
    let member = member(world, sigma, q, theta).map_err(|e| e.to_string())?;
    let report = equilibrium::steady_state(world, weights, &member.strategy).map_err(|e| e.to_string())?;
    let sigma_rel_error = (&report.sigma - sigma).norm() / sigma.norm();
    if !(sigma_rel_error < SIGMA_MATCH_TOL) {
        return Err(format!("equilibrium covariance differs from the seed by {sigma_rel_error:e}"));
    }
    let constraint_residual = q.constraint_residual(&member.strategy.phi);
    Ok(ValidatedMember {
        member,
        report,
        sigma_rel_error,
        constraint_residual,
    })
}

/// Images of the unit circle under a map, `samples` points per ellipse.
pub fn unit_circle_image(map: &Matrix, samples: usize) -> Vec<DVector<f64>> {
    assert_eq!(map.ncols(), 2, "unit circle lives in two dimensions");
    (0..samples)
        .map(|k| {
            let t = 2.0 * std::f64::consts::PI * k as f64 / samples as f64;
            map * DVector::from_vec(vec![t.cos(), t.sin()])
        })
        .collect()
}
