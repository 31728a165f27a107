//! Reading a strategy as exact inference under a distorted world model.
//!
//! The filter `ŝ_t = Γŝ_{t−1} + βo_t` is the steady-state Kalman filter of an
//! assumed model `{𝒟, ℰ, 𝒬, ℛ}` when `Γ = (I − β)(𝒟 + ℰL)` and the posterior
//! covariance `P` satisfies `P = (I − β)(𝒟P𝒟ᵀ + 𝒬)`. Taking `ℰ = E`, `ℛ = R`
//! and `P = Σ_e`, the mean squared estimation error under the true dynamics,
//! fixes `𝒟` and `𝒬`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::equilibrium::EquilibriumError;
use crate::matrixkit::{self, Matrix, MatrixError};
use crate::model::{self, rows, FilterForm, ModelError, Strategy, SubjectiveModel, WorldModel};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InterpretError {
    #[error("action covariance is singular")]
    SingularActionCovariance,
    #[error("I − beta is not invertible")]
    NonInvertibleUpdate,
    #[error("no assumed process noise is consistent (fixed point residual {fixed_point_residual:e}, gain residual {gain_residual:e})")]
    InconsistentFixedPoint {
        fixed_point_residual: f64,
        gain_residual: f64,
    },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

impl From<ModelError> for InterpretError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::SingularActionCovariance => Self::SingularActionCovariance,
            ModelError::Matrix(m) => Self::Matrix(m),
            other => Self::DimensionMismatch(other.to_string()),
        }
    }
}

impl From<EquilibriumError> for InterpretError {
    fn from(e: EquilibriumError) -> Self {
        match e {
            EquilibriumError::Matrix(m) => Self::Matrix(m),
            other => Self::DimensionMismatch(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, InterpretError>;

/// `Σ_e = Σ_s − KΣ_saᵀ − Σ_saKᵀ + KΣ_aKᵀ` for the regression readout
/// `K = Σ_saΣ_a⁻¹`.
pub fn estimation_error_cov(world: &WorldModel, s: &Strategy, sigma: &Matrix) -> Result<Matrix> {
    s.check_world(world)?;
    let (_, sigma_sa, sigma_a) = model::blocks(sigma, world.n());
    let k = model::regression_readout(&sigma_sa, &sigma_a)?;
    Ok(error_cov_for_readout(sigma, world.n(), &k))
}

/// Error covariance of the estimate `ŝ = K a` for an arbitrary readout.
pub fn error_cov_for_readout(sigma: &Matrix, n: usize, k: &Matrix) -> Matrix {
    let (sigma_s, sigma_sa, sigma_a) = model::blocks(sigma, n);
    let cross = k * sigma_sa.transpose();
    matrixkit::symmetrize(&(sigma_s - &cross - cross.transpose() + k * sigma_a * k.transpose()))
}

/// A recovered model together with how well it explains the filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interpretation {
    pub model: SubjectiveModel,
    /// `‖Σ_e − (I − β)(𝒟Σ_e𝒟ᵀ + 𝒬)‖_F`.
    pub fixed_point_residual: f64,
    /// `‖β − S(S + ℛ)⁻¹‖_F` with `S = 𝒟Σ_e𝒟ᵀ + 𝒬`.
    pub gain_residual: f64,
    /// `‖Γ − (I − β)(𝒟 + ℰL)‖_F`.
    pub filter_residual: f64,
    /// The closed form `(ℛ⁻¹(ℛ⁻¹ − Σ_e)ℛ⁻¹)⁻¹ − 𝒟Σ_e𝒟ᵀ − ℛ`, kept for
    /// comparison only.
    #[serde(with = "optional_rows")]
    pub closed_form_q: Option<Matrix>,
    /// `‖closed_form_q − 𝒬‖_F`.
    pub closed_form_q_gap: Option<f64>,
    /// Smallest eigenvalue of 𝒬; negative values mean the assumed process
    /// noise is not a covariance.
    pub q_min_eig: f64,
}

mod optional_rows {
    use crate::matrixkit::{from_rows, to_rows, Matrix};
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Option<Matrix>, s: S) -> Result<S::Ok, S::Error> {
        m.as_ref().map(to_rows).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Matrix>, D::Error> {
        Option::<Vec<Vec<f64>>>::deserialize(d)?
            .map(|r| from_rows(&r).map_err(D::Error::custom))
            .transpose()
    }
}

/// Tolerance of [`ensure_consistent`].
pub const CONSISTENCY_TOL: f64 = 1e-6;

/// `𝒟 = (I − β)⁻¹Γ − ℰL`, `𝒬 = (I − β)⁻¹Σ_e − 𝒟Σ_e𝒟ᵀ` with `ℰ = E`, `ℛ = R`.
///
/// The assumed process noise comes from the covariance fixed point. Whether
/// the same model also reproduces β through the Kalman gain formula is
/// reported in `gain_residual`; see [`ensure_consistent`].
pub fn recover_subjective_model(world: &WorldModel, f: &FilterForm, sigma_e: &Matrix) -> Result<Interpretation> {
    let n = world.n();
    if f.gamma.shape() != (n, n) || f.beta.shape() != (n, n) || sigma_e.shape() != (n, n) {
        return Err(InterpretError::DimensionMismatch(format!("filter and error covariance must be {n}x{n}")));
    }
    let eye = Matrix::identity(n, n);
    let update = &eye - &f.beta;
    let lu = update.clone().lu();
    let sv = update.singular_values();
    if sv.min() <= 1e-12 * sv.max().max(1.0) {
        return Err(InterpretError::NonInvertibleUpdate);
    }
    let solve = |rhs: &Matrix| lu.solve(rhs).ok_or(InterpretError::NonInvertibleUpdate);
    let d = solve(&f.gamma)? - &world.e * &f.gain;
    let pred = &d * sigma_e * d.transpose();
    let q = matrixkit::symmetrize(&(solve(sigma_e)? - &pred));

    let s_pred = &pred + &q;
    let fixed_point_residual = (sigma_e - &update * &s_pred).norm();
    let gain = (&s_pred + &world.r)
        .transpose()
        .lu()
        .solve(&s_pred.transpose())
        .map(|x| x.transpose());
    let gain_residual = gain.map_or(f64::INFINITY, |g| (&f.beta - g).norm());
    let filter_residual = (&f.gamma - &update * (&d + &world.e * &f.gain)).norm();

    let closed_form_q = world.r.clone().try_inverse().and_then(|r_inv| {
        (&r_inv * (&r_inv - sigma_e) * &r_inv)
            .try_inverse()
            .map(|x| x - &pred - &world.r)
    });
    let closed_form_q_gap = closed_form_q.as_ref().map(|c| (c - &q).norm());
    let q_min_eig = matrixkit::min_eigenvalue(&q)?;
    Ok(Interpretation {
        model: SubjectiveModel {
            dtil: d,
            etil: world.e.clone(),
            qtil: q,
            rtil: world.r.clone(),
        },
        fixed_point_residual,
        gain_residual,
        filter_residual,
        closed_form_q,
        closed_form_q_gap,
        q_min_eig,
    })
}

/// Accepts an interpretation only if the covariance fixed point and the gain
/// formula both hold within `tol`.
pub fn ensure_consistent(i: &Interpretation, tol: f64) -> Result<()> {
    if i.fixed_point_residual <= tol && i.gain_residual <= tol {
        Ok(())
    } else {
        Err(InterpretError::InconsistentFixedPoint {
            fixed_point_residual: i.fixed_point_residual,
            gain_residual: i.gain_residual,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Inference {
    Credulous,
    Skeptical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Control {
    Reactive,
    Serene,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyProfile {
    pub filter: FilterForm,
    pub interpretation: Interpretation,
    #[serde(rename = "Sigma_e", with = "rows")]
    pub error_cov: Matrix,
    /// `‖β‖_F / ‖β_Kalman‖_F` against the true model's steady-state gain.
    pub credulity_index: f64,
    /// Φ itself for one action; otherwise `Re λ / |λ|` of Φ's dominant
    /// eigenvalue.
    pub reactivity_index: f64,
    /// Φ or 𝒟 has an eigenvalue with `|Im λ| > 1e-8`.
    pub oscillation_flag: bool,
    pub inference: Inference,
    pub control: Control,
}

impl StrategyProfile {
    pub fn subjective(&self) -> &SubjectiveModel {
        &self.interpretation.model
    }
}

fn reactivity(phi: &Matrix) -> Result<f64> {
    if phi.nrows() == 1 {
        return Ok(phi[(0, 0)]);
    }
    let eig = matrixkit::eigenvalues(phi)?;
    let (re, im) = eig
        .into_iter()
        .max_by(|a, b| a.0.hypot(a.1).total_cmp(&b.0.hypot(b.1)))
        .unwrap_or((0.0, 0.0));
    let mag = re.hypot(im);
    Ok(if mag > 0.0 { re / mag } else { 0.0 })
}

fn has_complex_eigenvalues(m: &Matrix) -> Result<bool> {
    Ok(matrixkit::eigenvalues(m)?.iter().any(|&(_, im)| im.abs() > 1e-8))
}

/// Filter form, subjective model and qualitative labels of a strategy.
pub fn profile(world: &WorldModel, s: &Strategy, sigma: &Matrix) -> Result<StrategyProfile> {
    let filter = model::filter_from_strategy(s, sigma)?;
    let error_cov = estimation_error_cov(world, s, sigma)?;
    let interpretation = recover_subjective_model(world, &filter, &error_cov)?;
    let kalman = world.kalman()?;
    let credulity_index = filter.beta.norm() / kalman.gain.norm();
    let reactivity_index = reactivity(&s.phi)?;
    let oscillation_flag = has_complex_eigenvalues(&s.phi)? || has_complex_eigenvalues(&interpretation.model.dtil)?;
    Ok(StrategyProfile {
        inference: if credulity_index > 1.0 {
            Inference::Credulous
        } else {
            Inference::Skeptical
        },
        control: if reactivity_index < 0.0 {
            Control::Reactive
        } else {
            Control::Serene
        },
        filter,
        interpretation,
        error_cov,
        credulity_index,
        reactivity_index,
        oscillation_flag,
    })
}
