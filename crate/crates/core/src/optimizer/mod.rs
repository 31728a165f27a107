//! Frugal strategies: constrained minimization of the equilibrium loss, the
//! classical LQG reference, landscapes and phase sweeps.

mod local;
mod sweep;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use sweep::{landscape, phase_boundary, phase_sweep, BoundaryPoint, Grid, Landscape, PhaseRow};

use crate::equilibrium::{self, EquilibriumError, EquilibriumReport};
use crate::matrixkit::{self, Matrix, MatrixError};
use crate::model::{rows, CostWeights, ModelError, Strategy, WorldModel};
use local::{Point, Problem};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimizerError {
    #[error("invalid optimizer configuration: {0}")]
    InvalidConfig(String),
    #[error("no restart found a stable starting point")]
    NoStableInitialization,
    #[error("no stabilizing Riccati solution for the baseline")]
    NoStabilizingSolution,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

pub type Result<T> = std::result::Result<T, OptimizerError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Limited-memory BFGS with Armijo backtracking.
    Lbfgs,
    /// Full-gradient descent with heavy-ball momentum.
    Momentum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub method: Method,
    pub learning_rate: f64,
    pub momentum: f64,
    pub lbfgs_memory: usize,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub restarts: usize,
    pub seed: u64,
    pub stability_margin: f64,
    /// Newton refinement steps after descent stalls.
    pub polish_steps: usize,
    pub hessian_step: f64,
    /// Minimum Hessian eigenvalue still accepted as a local minimum.
    pub hessian_tol: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            method: Method::Lbfgs,
            learning_rate: 1e-2,
            momentum: 0.9,
            lbfgs_memory: 10,
            max_iters: 5000,
            grad_tol: 1e-6,
            restarts: 4,
            seed: 0,
            stability_margin: 1e-3,
            polish_steps: 8,
            hessian_step: 1e-5,
            hessian_tol: 1e-6,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(OptimizerError::InvalidConfig(msg.into()));
        if !(self.grad_tol > 0.0) {
            return bad("grad_tol must be > 0");
        }
        if self.restarts < 1 {
            return bad("restarts must be ≥ 1");
        }
        if !(self.stability_margin > 0.0 && self.stability_margin < 1.0) {
            return bad("stability_margin must lie in (0, 1)");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.lbfgs_memory < 1 {
            return bad("lbfgs_memory must be ≥ 1");
        }
        if !(self.hessian_step > 0.0) {
            return bad("hessian_step must be > 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub strategy: Strategy,
    pub report: EquilibriumReport,
    pub converged: bool,
    pub gradient_norm: f64,
    pub hessian_min_eig: f64,
    pub iterations: usize,
    pub best_restart: usize,
    /// Final loss of each restart; infinite where no stable start was found.
    pub restart_losses: Vec<f64>,
    /// The optimum is the deaf strategy `Φ = 0, Ψ = 0` on the boundary of
    /// the feasible set, where Σ_a vanishes and no gradient exists.
    pub boundary_optimum: bool,
}

/// Static state-feedback LQR gain, used as a stabilizing start: with `Φ = 0`
/// and `Ψ = L` the nonzero eigenvalues of M are those of `D + EL`.
pub fn lqr_gain(world: &WorldModel, weights: &CostWeights) -> Result<Matrix> {
    let n = world.n();
    let eps = 1e-6 * (1.0 + weights.c_s.norm());
    let c_s = &weights.c_s + Matrix::identity(n, n) * eps;
    let x = matrixkit::solve_dare(&world.d, &world.e, &c_s, &weights.c_a)
        .map_err(|_| OptimizerError::NoStabilizingSolution)?;
    matrixkit::riccati_gain(&world.d, &world.e, &weights.c_a, &x)
        .map(|k| -k)
        .ok_or(OptimizerError::NoStabilizingSolution)
}

fn initial_point(prob: &Problem, lqr: &Matrix, restart: usize, seed: u64) -> Option<Point> {
    let (n, m) = (prob.world.n(), prob.world.m());
    let base = Strategy {
        phi: Matrix::zeros(m, m),
        psi: lqr.clone(),
    };
    if restart == 0 {
        return prob.eval(&DVector::from_vec(base.to_params()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64);
    let noise = Normal::new(0.0, 0.1 / (n as f64).sqrt()).expect("valid normal");
    for _ in 0..100 {
        let c = rng.random_range(-0.5..0.5);
        let phi = Matrix::identity(m, m) * c;
        let psi = Matrix::from_fn(m, n, |i, j| lqr[(i, j)] + noise.sample(&mut rng));
        let x = DVector::from_vec(Strategy { phi, psi }.to_params());
        if let Some(p) = prob.eval(&x) {
            return Some(p);
        }
    }
    None
}

/// Minimizes the equilibrium loss over stabilizing strategies.
///
/// Restart 0 starts from the static LQR gain; later restarts perturb it with
/// seeded Gaussian noise and `Φ = cI`. The best restart is refined and checked
/// for a positive semidefinite Hessian. A result that fails the gradient or
/// curvature test is returned with `converged = false`.
pub fn solve(world: &WorldModel, weights: &CostWeights, cfg: &OptimizerConfig) -> Result<SolveResult> {
    cfg.validate()?;
    world.validate()?;
    weights.validate()?;
    weights.check_world(world)?;
    let deaf = deaf_candidate(world, weights, cfg)?;
    let prob = Problem {
        world,
        weights,
        margin: cfg.stability_margin,
        floor: deaf.as_ref().map(|r| r.total_loss),
    };
    let lqr = lqr_gain(world, weights)?;

    let runs: Vec<Option<(Point, usize)>> = (0..cfg.restarts)
        .into_par_iter()
        .map(|k| {
            let start = initial_point(&prob, &lqr, k, cfg.seed)?;
            let r = local::minimize(&prob, start, cfg);
            Some((r.point, r.iterations))
        })
        .collect();
    let restart_losses: Vec<f64> = runs
        .iter()
        .map(|r| r.as_ref().map_or(f64::INFINITY, |(p, _)| p.loss()))
        .collect();

    let mut best: Option<usize> = None;
    for (k, &loss) in restart_losses.iter().enumerate() {
        if !loss.is_finite() {
            continue;
        }
        match best {
            Some(b) if loss >= restart_losses[b] - 1e-9 * (1.0 + restart_losses[b].abs()) => {}
            _ => best = Some(k),
        }
    }
    let best = best.ok_or(OptimizerError::NoStableInitialization)?;
    let (point, iterations) = runs[best].clone().expect("finite loss implies a run");

    if let Some(deaf) = deaf {
        if deaf.total_loss <= point.loss() + 1e-12 * (1.0 + point.loss().abs()) {
            return Ok(SolveResult {
                strategy: Strategy::zeros(world.n(), world.m()),
                report: deaf,
                converged: true,
                gradient_norm: 0.0,
                hessian_min_eig: 0.0,
                iterations,
                best_restart: best,
                restart_losses,
                boundary_optimum: true,
            });
        }
    }

    let hessian_min_eig = prob
        .hessian(&point.x, cfg.hessian_step)
        .and_then(|h| matrixkit::min_eigenvalue(&h).ok())
        .unwrap_or(f64::NAN);
    let gradient_norm = point.grad.norm();
    Ok(SolveResult {
        strategy: prob.strategy(&point.x),
        converged: gradient_norm < cfg.grad_tol && hessian_min_eig >= -cfg.hessian_tol,
        report: point.report,
        gradient_norm,
        hessian_min_eig,
        iterations,
        best_restart: best,
        restart_losses,
        boundary_optimum: false,
    })
}

/// The strategy that ignores its observations, when the open loop is stable.
fn deaf_candidate(world: &WorldModel, weights: &CostWeights, cfg: &OptimizerConfig) -> Result<Option<EquilibriumReport>> {
    if matrixkit::spectral_radius(&world.d)? > 1.0 - cfg.stability_margin {
        return Ok(None);
    }
    Ok(equilibrium::steady_state(world, weights, &Strategy::zeros(world.n(), world.m())).ok())
}

/// Kalman filter plus LQR, mapped into the controller form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LqgBaseline {
    pub strategy: Strategy,
    pub report: EquilibriumReport,
    #[serde(rename = "kalman_gain", with = "rows")]
    pub kalman_gain: Matrix,
    #[serde(rename = "lqr_gain", with = "rows")]
    pub lqr_gain: Matrix,
    #[serde(rename = "Gamma", with = "rows")]
    pub gamma: Matrix,
}

/// `Γ = (I − β)(D + EL)`, `Φ = LΓL⁺`, `Ψ = Lβ` with the steady-state Kalman
/// gain β and the LQR gain L. The information term is evaluated but not
/// optimized. When `m < n` the projection through `L⁺` discards part of the
/// filter state and the resulting controller need not be stable.
pub fn classical_lqg_baseline(world: &WorldModel, weights: &CostWeights) -> Result<LqgBaseline> {
    weights.check_world(world)?;
    let n = world.n();
    let x = matrixkit::solve_dare(&world.d, &world.e, &weights.c_s, &weights.c_a)
        .map_err(|_| OptimizerError::NoStabilizingSolution)?;
    let lqr = -matrixkit::riccati_gain(&world.d, &world.e, &weights.c_a, &x).ok_or(OptimizerError::NoStabilizingSolution)?;
    let beta = world.kalman().map_err(|_| OptimizerError::NoStabilizingSolution)?.gain;
    let gamma = (Matrix::identity(n, n) - &beta) * (&world.d + &world.e * &lqr);
    let strategy = Strategy {
        phi: &lqr * &gamma * matrixkit::pinv(&lqr),
        psi: &lqr * &beta,
    };
    let report = equilibrium::steady_state(world, weights, &strategy)?;
    Ok(LqgBaseline {
        strategy,
        report,
        kalman_gain: beta,
        lqr_gain: lqr,
        gamma,
    })
}
