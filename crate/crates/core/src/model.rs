//! Worlds, cost weights, strategies and their alternate parameterizations.
//!
//! A strategy is stored in the controller's input–output form
//! `a_t = Φ a_{t−1} + Ψ o_t`. The filter form `{Γ, β, L}` describes the same
//! controller as an exponential filter `ŝ_t = Γ ŝ_{t−1} + β o_t` followed by a
//! linear readout `a_t = L ŝ_t`. Going from the controller form back to a
//! filter requires choosing the degenerate observation scaling β; we fix it
//! through the state readout `K = Σ_sa Σ_a⁻¹`, the least-squares regression of
//! the state on the action, which minimizes the trace of the estimation-error
//! covariance over all linear readouts.
//!
//! Covariance blocks follow one orientation everywhere: `Σ_sa = E[s aᵀ]` is
//! `n × m`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrixkit::{self, Matrix, MatrixError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid world model: {0}")]
    InvalidWorld(String),
    #[error("invalid cost weights: {0}")]
    InvalidWeights(String),
    #[error("action covariance is singular")]
    SingularActionCovariance,
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Serde helpers that store matrices as nested row arrays.
pub mod rows {
    use super::Matrix;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Matrix, s: S) -> Result<S::Ok, S::Error> {
        crate::matrixkit::to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        crate::matrixkit::from_rows(&rows).map_err(D::Error::custom)
    }
}

fn check_shape(m: &Matrix, shape: (usize, usize), name: &str) -> Result<()> {
    if m.shape() == shape {
        Ok(())
    } else {
        Err(ModelError::DimensionMismatch(format!(
            "{name} must be {}x{}, got {}x{}",
            shape.0,
            shape.1,
            m.nrows(),
            m.ncols()
        )))
    }
}

/// True linear-Gaussian plant: `s_t = D s_{t−1} + E a_{t−1} + w`, `o_t = s_t + v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldModel {
    #[serde(rename = "D", with = "rows")]
    pub d: Matrix,
    #[serde(rename = "E", with = "rows")]
    pub e: Matrix,
    #[serde(rename = "Q", with = "rows")]
    pub q: Matrix,
    #[serde(rename = "R", with = "rows")]
    pub r: Matrix,
}

impl WorldModel {
    /// Validates shapes, noise covariances and stabilizability.
    pub fn new(d: Matrix, e: Matrix, q: Matrix, r: Matrix) -> Result<Self> {
        let world = Self { d, e, q, r };
        world.validate()?;
        Ok(world)
    }

    /// Scalar world with `q·I`, `r·I` noise.
    pub fn scalar(d: f64, e: f64, q: f64, r: f64) -> Result<Self> {
        let one = |v| Matrix::from_element(1, 1, v);
        Self::new(one(d), one(e), one(q), one(r))
    }

    pub fn n(&self) -> usize {
        self.d.nrows()
    }

    pub fn m(&self) -> usize {
        self.e.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.d.nrows();
        if n == 0 || !self.d.is_square() {
            return Err(ModelError::InvalidWorld("D must be square and non-empty".into()));
        }
        if self.e.nrows() != n || self.e.ncols() == 0 {
            return Err(ModelError::DimensionMismatch(format!(
                "E must have {n} rows and at least one column, got {}x{}",
                self.e.nrows(),
                self.e.ncols()
            )));
        }
        check_shape(&self.q, (n, n), "Q")?;
        check_shape(&self.r, (n, n), "R")?;
        for (m, name) in [(&self.d, "D"), (&self.e, "E"), (&self.q, "Q"), (&self.r, "R")] {
            if !matrixkit::all_finite(m) {
                return Err(ModelError::InvalidWorld(format!("{name} has non-finite entries")));
            }
        }
        if !matrixkit::is_positive_definite(&self.q, 0.0)? {
            return Err(ModelError::InvalidWorld("Q must be positive definite".into()));
        }
        if !matrixkit::is_positive_definite(&self.r, 0.0)? {
            return Err(ModelError::InvalidWorld("R must be positive definite".into()));
        }
        let m = self.m();
        matrixkit::solve_dare(
            &self.d,
            &self.e,
            &Matrix::identity(n, n),
            &Matrix::identity(m, m),
        )
        .map_err(|_| ModelError::InvalidWorld("(D, E) is not stabilizable".into()))?;
        Ok(())
    }

    /// Steady-state Kalman filter of the true model: prior covariance `P⁻`,
    /// posterior covariance `P` and gain `β = P⁻(P⁻ + R)⁻¹`.
    pub fn kalman(&self) -> Result<KalmanSteadyState> {
        let n = self.n();
        let prior = matrixkit::solve_dare(&self.d.transpose(), &Matrix::identity(n, n), &self.q, &self.r)?;
        let gain = (&prior + &self.r)
            .transpose()
            .lu()
            .solve(&prior.transpose())
            .ok_or(ModelError::Matrix(MatrixError::Singular))?
            .transpose();
        let posterior = matrixkit::symmetrize(&((Matrix::identity(n, n) - &gain) * &prior));
        Ok(KalmanSteadyState {
            prior,
            posterior,
            gain,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanSteadyState {
    pub prior: Matrix,
    pub posterior: Matrix,
    pub gain: Matrix,
}

/// Penalties on state deviation, action effort and bits of inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    #[serde(rename = "C_s", with = "rows")]
    pub c_s: Matrix,
    #[serde(rename = "C_a", with = "rows")]
    pub c_a: Matrix,
    #[serde(rename = "C_b")]
    pub c_b: f64,
}

impl CostWeights {
    pub fn new(c_s: Matrix, c_a: Matrix, c_b: f64) -> Result<Self> {
        let w = Self { c_s, c_a, c_b };
        w.validate()?;
        Ok(w)
    }

    pub fn scalar(c_s: f64, c_a: f64, c_b: f64) -> Result<Self> {
        Self::new(Matrix::from_element(1, 1, c_s), Matrix::from_element(1, 1, c_a), c_b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c_b.is_finite() && self.c_b >= 0.0) {
            return Err(ModelError::InvalidWeights(format!("C_b must be ≥ 0, got {}", self.c_b)));
        }
        if !self.c_s.is_square() || matrixkit::min_eigenvalue(&self.c_s)? < -1e-12 {
            return Err(ModelError::InvalidWeights("C_s must be symmetric PSD".into()));
        }
        if !self.c_a.is_square() || !matrixkit::is_positive_definite(&self.c_a, 0.0)? {
            return Err(ModelError::InvalidWeights("C_a must be symmetric PD".into()));
        }
        Ok(())
    }

    pub fn check_world(&self, world: &WorldModel) -> Result<()> {
        check_shape(&self.c_s, (world.n(), world.n()), "C_s")?;
        check_shape(&self.c_a, (world.m(), world.m()), "C_a")
    }

    pub fn with_c_b(&self, c_b: f64) -> Self {
        Self { c_b, ..self.clone() }
    }
}

/// Controller input–output form `a_t = Φ a_{t−1} + Ψ o_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strategy {
    #[serde(rename = "Phi", with = "rows")]
    pub phi: Matrix,
    #[serde(rename = "Psi", with = "rows")]
    pub psi: Matrix,
}

impl Strategy {
    pub fn new(phi: Matrix, psi: Matrix) -> Result<Self> {
        let m = psi.nrows();
        check_shape(&phi, (m, m), "Phi")?;
        if !(matrixkit::all_finite(&phi) && matrixkit::all_finite(&psi)) {
            return Err(ModelError::DimensionMismatch("strategy has non-finite entries".into()));
        }
        Ok(Self { phi, psi })
    }

    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            phi: Matrix::zeros(m, m),
            psi: Matrix::zeros(m, n),
        }
    }

    pub fn m(&self) -> usize {
        self.psi.nrows()
    }

    pub fn n(&self) -> usize {
        self.psi.ncols()
    }

    pub fn check_world(&self, world: &WorldModel) -> Result<()> {
        check_shape(&self.phi, (world.m(), world.m()), "Phi")?;
        check_shape(&self.psi, (world.m(), world.n()), "Psi")
    }

    /// Flattened parameters `[vec(Φ); vec(Ψ)]`, row-major within each block.
    pub fn to_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.phi.len() + self.psi.len());
        for m in [&self.phi, &self.psi] {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    out.push(m[(i, j)]);
                }
            }
        }
        out
    }

    pub fn from_params(params: &[f64], n: usize, m: usize) -> Self {
        assert_eq!(params.len(), m * m + m * n, "parameter vector length");
        let phi = Matrix::from_row_slice(m, m, &params[..m * m]);
        let psi = Matrix::from_row_slice(m, n, &params[m * m..]);
        Self { phi, psi }
    }
}

/// Exponential-filter view `ŝ_t = Γ ŝ_{t−1} + β o_t`, `a_t = L ŝ_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterForm {
    #[serde(rename = "Gamma", with = "rows")]
    pub gamma: Matrix,
    #[serde(rename = "beta", with = "rows")]
    pub beta: Matrix,
    #[serde(rename = "L", with = "rows")]
    pub gain: Matrix,
    /// State readout `K` (n×m) used to resolve the β degeneracy.
    #[serde(rename = "K", with = "rows")]
    pub readout: Matrix,
}

/// `Φ = L Γ L⁺`, `Ψ = L β`.
pub fn strategy_from_filter(f: &FilterForm) -> Result<Strategy> {
    let n = f.gamma.nrows();
    let m = f.gain.nrows();
    check_shape(&f.gamma, (n, n), "Gamma")?;
    check_shape(&f.beta, (n, n), "beta")?;
    check_shape(&f.gain, (m, n), "L")?;
    let phi = &f.gain * &f.gamma * matrixkit::pinv(&f.gain);
    let psi = &f.gain * &f.beta;
    Ok(Strategy { phi, psi })
}

/// Splits an `(n+m)×(n+m)` joint covariance into `(Σ_s, Σ_sa, Σ_a)`.
pub fn blocks(sigma: &Matrix, n: usize) -> (Matrix, Matrix, Matrix) {
    let total = sigma.nrows();
    let m = total - n;
    (
        sigma.view((0, 0), (n, n)).into_owned(),
        sigma.view((0, n), (n, m)).into_owned(),
        sigma.view((n, n), (m, m)).into_owned(),
    )
}

/// Recovers `{Γ, β, L}` from a strategy and its equilibrium covariance using
/// the regression readout `K = Σ_sa Σ_a⁻¹`.
pub fn filter_from_strategy(s: &Strategy, sigma: &Matrix) -> Result<FilterForm> {
    let n = s.n();
    let m = s.m();
    check_shape(sigma, (n + m, n + m), "Sigma")?;
    let (_, sigma_sa, sigma_a) = blocks(sigma, n);
    let readout = regression_readout(&sigma_sa, &sigma_a)?;
    let gamma = &readout * &s.phi * matrixkit::pinv(&readout);
    let beta = &readout * &s.psi;
    let gain = matrixkit::pinv(&readout);
    let f = FilterForm {
        gamma,
        beta,
        gain,
        readout,
    };
    if [&f.gamma, &f.beta, &f.gain].iter().any(|m| !matrixkit::all_finite(m)) {
        return Err(ModelError::SingularActionCovariance);
    }
    Ok(f)
}

/// `K = Σ_sa Σ_a⁻¹`.
pub fn regression_readout(sigma_sa: &Matrix, sigma_a: &Matrix) -> Result<Matrix> {
    let m = sigma_a.nrows();
    if !matrixkit::is_positive_definite(sigma_a, 1e-14 * (1.0 + sigma_a.amax()))? {
        return Err(ModelError::SingularActionCovariance);
    }
    let chol = matrixkit::symmetrize(sigma_a)
        .cholesky()
        .ok_or(ModelError::SingularActionCovariance)?;
    // K Σ_a = Σ_sa  ⇔  Σ_a Kᵀ = Σ_saᵀ
    let kt = chol.solve(&sigma_sa.transpose());
    debug_assert_eq!(kt.nrows(), m);
    Ok(kt.transpose())
}

/// Gaussian belief `N(ŝ, P)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Belief {
    pub mean: matrixkit::Vector,
    pub covariance: Matrix,
}

impl Belief {
    pub fn new(mean: matrixkit::Vector, covariance: Matrix) -> Result<Self> {
        check_shape(&covariance, (mean.len(), mean.len()), "belief covariance")?;
        if matrixkit::min_eigenvalue(&covariance)? < -1e-10 {
            return Err(ModelError::DimensionMismatch("belief covariance must be PSD".into()));
        }
        Ok(Self {
            mean,
            covariance: matrixkit::symmetrize(&covariance),
        })
    }
}

/// Assumed generative model `{𝒟, ℰ, 𝒬, ℛ}` under which a filter is exact
/// Bayesian inference. ℰ and ℛ always equal the true E and R.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectiveModel {
    #[serde(rename = "D_subjective", with = "rows")]
    pub dtil: Matrix,
    #[serde(rename = "E_subjective", with = "rows")]
    pub etil: Matrix,
    #[serde(rename = "Q_subjective", with = "rows")]
    pub qtil: Matrix,
    #[serde(rename = "R_subjective", with = "rows")]
    pub rtil: Matrix,
}

impl SubjectiveModel {
    /// One Kalman step under the assumed model with a fixed gain: predict with
    /// `𝒟, ℰ`, then correct with `β`.
    pub fn filter_step(&self, belief: &Belief, action: &matrixkit::Vector, obs: &matrixkit::Vector, beta: &Matrix) -> Belief {
        let n = self.dtil.nrows();
        let pred_mean = &self.dtil * &belief.mean + &self.etil * action;
        let pred_cov = &self.dtil * &belief.covariance * self.dtil.transpose() + &self.qtil;
        let mean = &pred_mean + beta * (obs - &pred_mean);
        let covariance = matrixkit::symmetrize(&((Matrix::identity(n, n) - beta) * pred_cov));
        Belief { mean, covariance }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn rand_matrix(r: usize, c: usize, rng: &mut impl Rng) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn memoryless_filter() {
        let l = Matrix::from_row_slice(1, 2, &[0.7, -1.3]);
        let f = FilterForm {
            gamma: Matrix::zeros(2, 2),
            beta: Matrix::identity(2, 2),
            gain: l.clone(),
            readout: matrixkit::pinv(&l),
        };
        let s = strategy_from_filter(&f).unwrap();
        assert_eq!(s.phi, Matrix::zeros(1, 1));
        assert_relative_eq!(s.psi, l, epsilon = 1e-15);
    }

    #[test]
    fn scalar_filter() {
        let one = |v| Matrix::from_element(1, 1, v);
        let f = FilterForm {
            gamma: one(0.4),
            beta: one(0.6),
            gain: one(-1.5),
            readout: one(-1.0 / 1.5),
        };
        let s = strategy_from_filter(&f).unwrap();
        assert_relative_eq!(s.phi[(0, 0)], 0.4, epsilon = 1e-15);
        assert_relative_eq!(s.psi[(0, 0)], -0.9, epsilon = 1e-15);
    }

    #[test]
    fn dimension_errors() {
        let f = FilterForm {
            gamma: Matrix::zeros(2, 2),
            beta: Matrix::identity(3, 3),
            gain: Matrix::zeros(1, 2),
            readout: Matrix::zeros(2, 1),
        };
        assert!(matches!(strategy_from_filter(&f), Err(ModelError::DimensionMismatch(_))));
        assert!(Strategy::new(Matrix::zeros(2, 2), Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn perfect_scalar_readout() {
        // Σ_sa = Σ_a ⇒ K = 1.
        let sigma = Matrix::from_row_slice(2, 2, &[2.0, 0.8, 0.8, 0.8]);
        let s = Strategy::new(Matrix::from_element(1, 1, 0.3), Matrix::from_element(1, 1, -0.7)).unwrap();
        let f = filter_from_strategy(&s, &sigma).unwrap();
        assert_relative_eq!(f.readout[(0, 0)], 1.0, epsilon = 1e-14);
        assert_relative_eq!(f.gamma[(0, 0)], 0.3, epsilon = 1e-14);
        assert_relative_eq!(f.beta[(0, 0)], -0.7, epsilon = 1e-14);
        assert_relative_eq!(f.gain[(0, 0)], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn singular_action_covariance() {
        let sigma = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let s = Strategy::zeros(1, 1);
        assert_eq!(filter_from_strategy(&s, &sigma), Err(ModelError::SingularActionCovariance));
    }

    #[test]
    fn round_trip_with_square_readout() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let n = 2;
            let a = rand_matrix(2 * n, 2 * n, &mut rng);
            let sigma = &a * a.transpose() + Matrix::identity(2 * n, 2 * n) * 0.1;
            let s = Strategy::new(rand_matrix(n, n, &mut rng), rand_matrix(n, n, &mut rng)).unwrap();
            let f = filter_from_strategy(&s, &sigma).unwrap();
            let back = strategy_from_filter(&f).unwrap();
            assert!((back.phi - &s.phi).norm() < 1e-8);
            assert!((back.psi - &s.psi).norm() < 1e-8);
        }
    }

    #[test]
    fn filter_round_trip_full_row_rank_gain() {
        // L full row rank (m < n): Γ' = L⁺ Φ L reproduces Φ = L Γ L⁺.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let l = rand_matrix(2, 4, &mut rng);
            let f = FilterForm {
                gamma: rand_matrix(4, 4, &mut rng),
                beta: rand_matrix(4, 4, &mut rng),
                gain: l.clone(),
                readout: matrixkit::pinv(&l),
            };
            let s = strategy_from_filter(&f).unwrap();
            let lp = matrixkit::pinv(&l);
            let f2 = FilterForm {
                gamma: &lp * &s.phi * &l,
                beta: &lp * &s.psi,
                gain: l.clone(),
                readout: lp.clone(),
            };
            let s2 = strategy_from_filter(&f2).unwrap();
            assert!((s2.phi - &s.phi).norm() < 1e-8);
            assert!((s2.psi - &s.psi).norm() < 1e-8);
        }
    }

    #[test]
    fn joint_rescaling_leaves_strategy_unchanged() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let l = rand_matrix(2, 2, &mut rng);
            let gamma = rand_matrix(2, 2, &mut rng);
            let beta = rand_matrix(2, 2, &mut rng);
            let t = rand_matrix(2, 2, &mut rng) + Matrix::identity(2, 2) * 2.0;
            let t_inv = t.clone().try_inverse().unwrap();
            let f1 = FilterForm {
                gamma: gamma.clone(),
                beta: beta.clone(),
                gain: l.clone(),
                readout: matrixkit::pinv(&l),
            };
            // ŝ' = T ŝ: β' = Tβ, Γ' = TΓT⁻¹, L' = L T⁻¹.
            let f2 = FilterForm {
                gamma: &t * &gamma * &t_inv,
                beta: &t * &beta,
                gain: &l * &t_inv,
                readout: Matrix::zeros(2, 2),
            };
            let s1 = strategy_from_filter(&f1).unwrap();
            let s2 = strategy_from_filter(&f2).unwrap();
            assert!((s1.phi - s2.phi).norm() < 1e-8);
            assert!((s1.psi - s2.psi).norm() < 1e-8);
        }
    }

    #[test]
    fn params_round_trip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let s = Strategy::new(rand_matrix(2, 2, &mut rng), rand_matrix(2, 3, &mut rng)).unwrap();
        assert_eq!(Strategy::from_params(&s.to_params(), 3, 2), s);
    }

    #[test]
    fn world_validation() {
        assert!(WorldModel::scalar(1.2, 1.0, 1.0, 1.0).is_ok());
        assert!(matches!(WorldModel::scalar(1.2, 1.0, 0.0, 1.0), Err(ModelError::InvalidWorld(_))));
        // Unstable, unreachable mode.
        let d = Matrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]);
        let e = Matrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let i = Matrix::identity(2, 2);
        assert!(WorldModel::new(d, e, i.clone(), i).is_err());
    }

    #[test]
    fn weights_validation() {
        assert!(CostWeights::scalar(1.0, 0.1, 0.0).is_ok());
        assert!(CostWeights::scalar(1.0, 0.0, 0.0).is_err());
        assert!(CostWeights::scalar(1.0, 0.1, -1.0).is_err());
        assert!(CostWeights::scalar(-1.0, 0.1, 0.0).is_err());
    }

    #[test]
    fn scalar_kalman_closed_form() {
        // Prior p solves p = d²p − d²p²/(p + r) + q.
        let (d, q, r) = (0.9f64, 1.0f64, 1.0f64);
        let w = WorldModel::scalar(d, 1.0, q, r).unwrap();
        let k = w.kalman().unwrap();
        // p² + (r − d²r − q)p − qr = 0
        let b = r - d * d * r - q;
        let p = (-b + (b * b + 4.0 * q * r).sqrt()) / 2.0;
        assert_relative_eq!(k.prior[(0, 0)], p, max_relative = 1e-12);
        assert_relative_eq!(k.gain[(0, 0)], p / (p + r), max_relative = 1e-12);
    }
}
