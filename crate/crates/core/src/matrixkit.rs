//! Dense-matrix primitives shared by every other module.
//!
//! Everything here is a pure function of its inputs. Dimensions in this crate
//! are tiny (state ≤ 6, action ≤ 2), so the solvers favour exactness and
//! simplicity over asymptotic cost: the discrete Lyapunov equation is solved
//! through its Kronecker (vectorized) form, and the Riccati equation with a
//! structure-preserving doubling iteration.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatrixError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("system is not stable (spectral radius {spectral_radius:.12})")]
    UnstableSystem { spectral_radius: f64 },
    #[error("matrix is not symmetric (max asymmetry {asymmetry:.3e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("Riccati equation has no stabilizing solution")]
    NoStabilizingSolution,
    #[error("iteration did not converge within {0} iterations")]
    MaxIterationsExceeded(usize),
    #[error("matrix is singular")]
    Singular,
    #[error("non-finite entries")]
    NonFinite,
}

pub type Result<T> = std::result::Result<T, MatrixError>;

/// Numerical thresholds used by the primitives. The defaults are the
/// module constants; callers may override them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// `solve_dlyap` rejects inputs with spectral radius ≥ 1 − this.
    pub stability_slack: f64,
    /// Absolute asymmetry accepted by symmetric routines.
    pub symmetry: f64,
    /// Relative singular-value cutoff of `pinv`.
    pub pinv_rcond: f64,
    /// Convergence threshold of the Riccati iteration.
    pub riccati_tol: f64,
    pub riccati_max_iters: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            stability_slack: 1e-9,
            symmetry: 1e-10,
            pinv_rcond: 1e-12,
            riccati_tol: 1e-10,
            riccati_max_iters: 100_000,
        }
    }
}

/// Eigendecomposition of a symmetric matrix, eigenvalues in descending order.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricEigen {
    pub eigenvalues: Vector,
    /// Orthonormal eigenvectors stored as columns, matching `eigenvalues`.
    pub eigenvectors: Matrix,
}

impl SymmetricEigen {
    pub fn reconstruct(&self) -> Matrix {
        let u = &self.eigenvectors;
        u * Matrix::from_diagonal(&self.eigenvalues) * u.transpose()
    }
}

pub fn frobenius(m: &Matrix) -> f64 {
    m.norm()
}

pub fn max_asymmetry(m: &Matrix) -> f64 {
    if !m.is_square() {
        return f64::INFINITY;
    }
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// `(S + Sᵀ)/2`.
pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

pub fn all_finite(m: &Matrix) -> bool {
    m.iter().all(|x| x.is_finite())
}

fn require_square(m: &Matrix, what: &str) -> Result<()> {
    if m.is_square() && m.nrows() > 0 {
        Ok(())
    } else {
        Err(MatrixError::DimensionMismatch(format!(
            "{what} must be square and non-empty, got {}x{}",
            m.nrows(),
            m.ncols()
        )))
    }
}

fn require_symmetric(m: &Matrix, tol: f64) -> Result<()> {
    let asymmetry = max_asymmetry(m);
    // Scale-aware so that large covariances are not rejected for rounding.
    let scale = 1.0 + m.amax();
    if asymmetry > tol * scale {
        Err(MatrixError::NotSymmetric { asymmetry })
    } else {
        Ok(())
    }
}

pub fn spectral_radius(m: &Matrix) -> Result<f64> {
    require_square(m, "spectral_radius input")?;
    if !all_finite(m) {
        return Err(MatrixError::NonFinite);
    }
    Ok(m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

/// Complex eigenvalues as `(re, im)` pairs.
pub fn eigenvalues(m: &Matrix) -> Result<Vec<(f64, f64)>> {
    require_square(m, "eigenvalue input")?;
    Ok(m.complex_eigenvalues().iter().map(|z| (z.re, z.im)).collect())
}

/// Solves `Σ = M Σ Mᵀ + Υ` for stable `M`.
pub fn solve_dlyap(m: &Matrix, upsilon: &Matrix) -> Result<Matrix> {
    solve_dlyap_with(m, upsilon, &Tolerances::default())
}

pub fn solve_dlyap_with(m: &Matrix, upsilon: &Matrix, tol: &Tolerances) -> Result<Matrix> {
    require_square(m, "M")?;
    if upsilon.shape() != m.shape() {
        return Err(MatrixError::DimensionMismatch(format!(
            "Υ is {}x{} but M is {}x{}",
            upsilon.nrows(),
            upsilon.ncols(),
            m.nrows(),
            m.ncols()
        )));
    }
    require_symmetric(upsilon, tol.symmetry)?;
    let rho = spectral_radius(m)?;
    if rho >= 1.0 - tol.stability_slack {
        return Err(MatrixError::UnstableSystem {
            spectral_radius: rho,
        });
    }
    let sigma = kronecker_solve(m, upsilon, false)?;
    Ok(symmetrize(&sigma))
}

/// Solves `X = Mᵀ X M + G`, the adjoint of [`solve_dlyap`].
pub fn solve_dlyap_adjoint(m: &Matrix, g: &Matrix) -> Result<Matrix> {
    require_square(m, "M")?;
    let rho = spectral_radius(m)?;
    if rho >= 1.0 - Tolerances::default().stability_slack {
        return Err(MatrixError::UnstableSystem {
            spectral_radius: rho,
        });
    }
    Ok(symmetrize(&kronecker_solve(m, g, true)?))
}

// vec(X) = (I − A⊗A)⁻¹ vec(C) with A = M (or Mᵀ for the adjoint). Column-major
// vec: vec(A X Aᵀ) = (A ⊗ A) vec(X).
fn kronecker_solve(m: &Matrix, c: &Matrix, transpose: bool) -> Result<Matrix> {
    let n = m.nrows();
    let a = if transpose { m.transpose() } else { m.clone() };
    let nn = n * n;
    let mut sys = Matrix::identity(nn, nn);
    for j in 0..n {
        for i in 0..n {
            let aij = a[(i, j)];
            if aij == 0.0 {
                continue;
            }
            for l in 0..n {
                for k in 0..n {
                    // vec index of X[(r, s)] is r + n*s and
                    // (A X Aᵀ)[(r, s)] = Σ A[r, p] X[p, q] A[s, q].
                    let row = i + n * k;
                    let col = j + n * l;
                    sys[(row, col)] -= aij * a[(k, l)];
                }
            }
        }
    }
    let rhs = Vector::from_column_slice(c.as_slice());
    let lu = sys.lu();
    let x = lu.solve(&rhs).ok_or(MatrixError::Singular)?;
    // One step of iterative refinement.
    let resid = &rhs - &(kron_apply(&a, &x, n));
    let dx = lu.solve(&resid).ok_or(MatrixError::Singular)?;
    let x = x + dx;
    let out = Matrix::from_column_slice(n, n, x.as_slice());
    if !all_finite(&out) {
        return Err(MatrixError::NonFinite);
    }
    Ok(out)
}

// (I − A⊗A) x without forming the Kronecker product.
fn kron_apply(a: &Matrix, x: &Vector, n: usize) -> Vector {
    let xm = Matrix::from_column_slice(n, n, x.as_slice());
    let y = &xm - a * &xm * a.transpose();
    Vector::from_column_slice(y.as_slice())
}

/// Stabilizing solution of the discrete algebraic Riccati equation
/// `X = AᵀXA − AᵀXB(W_c + BᵀXB)⁻¹BᵀXA + W_s`.
pub fn solve_dare(a: &Matrix, b: &Matrix, w_state: &Matrix, w_ctrl: &Matrix) -> Result<Matrix> {
    solve_dare_with(a, b, w_state, w_ctrl, &Tolerances::default())
}

pub fn solve_dare_with(
    a: &Matrix,
    b: &Matrix,
    w_state: &Matrix,
    w_ctrl: &Matrix,
    tol: &Tolerances,
) -> Result<Matrix> {
    require_square(a, "A")?;
    let n = a.nrows();
    if b.nrows() != n || w_state.shape() != (n, n) {
        return Err(MatrixError::DimensionMismatch(format!(
            "A is {n}x{n}, B is {}x{}, W_state is {}x{}",
            b.nrows(),
            b.ncols(),
            w_state.nrows(),
            w_state.ncols()
        )));
    }
    let m = b.ncols();
    if w_ctrl.shape() != (m, m) {
        return Err(MatrixError::DimensionMismatch(format!(
            "W_ctrl must be {m}x{m}, got {}x{}",
            w_ctrl.nrows(),
            w_ctrl.ncols()
        )));
    }
    require_symmetric(w_state, tol.symmetry)?;
    require_symmetric(w_ctrl, tol.symmetry)?;
    let w_ctrl_inv = w_ctrl
        .clone()
        .try_inverse()
        .ok_or(MatrixError::NoStabilizingSolution)?;

    // Structure-preserving doubling: A_k → 0, H_k → X quadratically.
    let eye = Matrix::identity(n, n);
    let mut ak = a.clone();
    let mut gk = symmetrize(&(b * &w_ctrl_inv * b.transpose()));
    let mut hk = symmetrize(w_state);
    let mut converged = false;
    for _ in 0..tol.riccati_max_iters {
        let w = &eye + &gk * &hk;
        let lu = w.lu();
        let w_inv_a = lu.solve(&ak).ok_or(MatrixError::NoStabilizingSolution)?;
        let w_inv_g = lu.solve(&gk).ok_or(MatrixError::NoStabilizingSolution)?;
        let a_next = &ak * &w_inv_a;
        let g_next = symmetrize(&(&gk + &ak * &w_inv_g * ak.transpose()));
        let h_next = symmetrize(&(&hk + ak.transpose() * &hk * &w_inv_a));
        if !all_finite(&h_next) {
            return Err(MatrixError::NoStabilizingSolution);
        }
        let delta = (&h_next - &hk).norm();
        let scale = 1.0 + h_next.norm();
        ak = a_next;
        gk = g_next;
        hk = h_next;
        if delta <= tol.riccati_tol * scale && ak.norm() <= tol.riccati_tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(MatrixError::MaxIterationsExceeded(tol.riccati_max_iters));
    }
    let x = hk;
    // Stabilizing check: closed loop A − B K must be stable.
    let k = riccati_gain(a, b, w_ctrl, &x).ok_or(MatrixError::NoStabilizingSolution)?;
    let rho = spectral_radius(&(a - b * k))?;
    if rho >= 1.0 {
        return Err(MatrixError::NoStabilizingSolution);
    }
    Ok(x)
}

/// `K = (W_c + BᵀXB)⁻¹BᵀXA`, the feedback gain paired with a Riccati solution.
pub fn riccati_gain(a: &Matrix, b: &Matrix, w_ctrl: &Matrix, x: &Matrix) -> Option<Matrix> {
    let lhs = w_ctrl + b.transpose() * x * b;
    lhs.lu().solve(&(b.transpose() * x * a))
}

/// One application of the Riccati map; `X` is a solution iff `riccati_map(X) = X`.
pub fn riccati_map(a: &Matrix, b: &Matrix, w_state: &Matrix, w_ctrl: &Matrix, x: &Matrix) -> Matrix {
    let k = riccati_gain(a, b, w_ctrl, x).expect("W_ctrl + BᵀXB must be invertible");
    a.transpose() * x * a - a.transpose() * x * b * k + w_state
}

/// Moore–Penrose pseudoinverse with the default relative cutoff.
pub fn pinv(m: &Matrix) -> Matrix {
    pinv_with(m, Tolerances::default().pinv_rcond)
}

pub fn pinv_with(m: &Matrix, rcond: f64) -> Matrix {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return Matrix::zeros(c, r);
    }
    let svd = m.clone().svd(true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => unreachable!("requested both singular vector sets"),
    };
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cutoff = rcond * smax;
    let k = svd.singular_values.len();
    let mut out = Matrix::zeros(c, r);
    for i in 0..k {
        let s = svd.singular_values[i];
        if s > cutoff && s > 0.0 {
            out += (vt.row(i).transpose() / s) * u.column(i).transpose();
        }
    }
    out
}

pub fn sym_eig(s: &Matrix) -> Result<SymmetricEigen> {
    require_square(s, "sym_eig input")?;
    require_symmetric(s, Tolerances::default().symmetry)?;
    let eig = nalgebra::SymmetricEigen::new(symmetrize(s));
    let n = s.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let eigenvalues = Vector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut eigenvectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(SymmetricEigen {
        eigenvalues,
        eigenvectors,
    })
}

pub fn min_eigenvalue(s: &Matrix) -> Result<f64> {
    let e = sym_eig(s)?;
    Ok(e.eigenvalues[e.eigenvalues.len() - 1])
}

pub fn is_positive_definite(s: &Matrix, tol: f64) -> Result<bool> {
    Ok(min_eigenvalue(s)? > tol)
}

/// Square-root factor `F = UΛ^{½}` with `F Fᵀ = S` for PSD `S`;
/// eigenvalues below zero are clamped.
pub fn psd_sqrt(s: &Matrix) -> Result<Matrix> {
    let e = sym_eig(s)?;
    let d = e.eigenvalues.map(|x| x.max(0.0).sqrt());
    Ok(&e.eigenvectors * Matrix::from_diagonal(&d))
}

/// `log det S` through a Cholesky factorization; `None` when `S` is not PD.
pub fn log_det_spd(s: &Matrix) -> Option<f64> {
    let chol = symmetrize(s).cholesky()?;
    let l = chol.l();
    let mut acc = 0.0;
    for i in 0..l.nrows() {
        acc += l[(i, i)].ln();
    }
    Some(2.0 * acc)
}

/// Parses nested row arrays into a matrix.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 {
        return Err(MatrixError::DimensionMismatch("empty matrix".into()));
    }
    if rows.iter().any(|row| row.len() != c) {
        return Err(MatrixError::DimensionMismatch("ragged rows".into()));
    }
    let m = Matrix::from_fn(r, c, |i, j| rows[i][j]);
    if !all_finite(&m) {
        return Err(MatrixError::NonFinite);
    }
    Ok(m)
}

pub fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}
