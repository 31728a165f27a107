//! Local descent on the flattened `(Φ, Ψ)` parameters inside the feasible set
//! `ρ(M) ≤ 1 − margin`, `Σ ≻ 0`.

use std::collections::VecDeque;

use nalgebra::DVector;

use super::{Method, OptimizerConfig};
use crate::equilibrium::{self, EquilibriumReport};
use crate::matrixkit::{self, Matrix};
use crate::model::{CostWeights, Strategy, WorldModel};

pub(crate) struct Problem<'a> {
    pub world: &'a WorldModel,
    pub weights: &'a CostWeights,
    pub margin: f64,
    /// Loss of the deaf boundary strategy, when it is feasible. Descent that
    /// reaches it is heading for the boundary and stops.
    pub floor: Option<f64>,
}

#[derive(Clone)]
pub(crate) struct Point {
    pub x: DVector<f64>,
    pub report: EquilibriumReport,
    pub grad: DVector<f64>,
}

impl Point {
    pub fn loss(&self) -> f64 {
        self.report.total_loss
    }
}

impl Problem<'_> {
    fn at_floor(&self, p: &Point) -> bool {
        self.floor.is_some_and(|f| (p.loss() - f).abs() <= 1e-9 * (1.0 + f.abs()))
    }
}

pub(crate) struct LocalResult {
    pub point: Point,
    pub iterations: usize,
}

impl Problem<'_> {
    fn dims(&self) -> (usize, usize) {
        (self.world.n(), self.world.m())
    }

    pub fn strategy(&self, x: &DVector<f64>) -> Strategy {
        let (n, m) = self.dims();
        Strategy::from_params(x.as_slice(), n, m)
    }

    /// Loss and gradient, or `None` outside the feasible set.
    pub fn eval(&self, x: &DVector<f64>) -> Option<Point> {
        if !x.iter().all(|v| v.is_finite()) {
            return None;
        }
        let s = self.strategy(x);
        let (report, grad) = equilibrium::loss_gradient(self.world, self.weights, &s).ok()?;
        if report.spectral_radius > 1.0 - self.margin || matrixkit::log_det_spd(&report.sigma).is_none() {
            return None;
        }
        let grad = DVector::from_vec(grad.to_params());
        if !grad.iter().all(|v| v.is_finite()) || !report.total_loss.is_finite() {
            return None;
        }
        Some(Point {
            x: x.clone(),
            report,
            grad,
        })
    }

    /// Central differences of the analytic gradient, symmetrized.
    pub fn hessian(&self, x: &DVector<f64>, step: f64) -> Option<Matrix> {
        let p = x.len();
        let mut h = Matrix::zeros(p, p);
        for j in 0..p {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += step;
            xm[j] -= step;
            let gp = self.eval(&xp)?.grad;
            let gm = self.eval(&xm)?.grad;
            h.set_column(j, &((gp - gm) / (2.0 * step)));
        }
        Some(matrixkit::symmetrize(&h))
    }
}

/// Backtracking along `dir` from `p`. With `armijo` the step must also give
/// sufficient decrease; otherwise feasibility alone is required.
fn line_search(prob: &Problem, p: &Point, dir: &DVector<f64>, t0: f64, armijo: bool) -> Option<Point> {
    let slope = p.grad.dot(dir);
    let mut t = t0;
    for _ in 0..60 {
        let x = &p.x + dir * t;
        if let Some(q) = prob.eval(&x) {
            if !armijo || q.loss() <= p.loss() + 1e-4 * t * slope {
                return Some(q);
            }
        }
        t *= 0.5;
    }
    None
}

fn two_loop(grad: &DVector<f64>, history: &VecDeque<(DVector<f64>, DVector<f64>)>) -> DVector<f64> {
    let mut q = grad.clone();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y) in history.iter().rev() {
        let rho = 1.0 / y.dot(s);
        let a = rho * s.dot(&q);
        q -= y * a;
        alphas.push((a, rho));
    }
    if let Some((s, y)) = history.back() {
        q *= s.dot(y) / y.dot(y);
    }
    for ((s, y), (a, rho)) in history.iter().zip(alphas.into_iter().rev()) {
        let b = rho * y.dot(&q);
        q += s * (a - b);
    }
    -q
}

/// Consecutive iterations without measurable movement after which descent
/// gives up.
const STALL_LIMIT: usize = 20;

/// The step moved neither the parameters nor the loss beyond rounding.
fn stalled(p: &Point, q: &Point) -> bool {
    (&q.x - &p.x).norm() <= 1e-14 * (1.0 + p.x.norm()) || p.loss() - q.loss() <= 1e-15 * (1.0 + p.loss().abs())
}

fn lbfgs(prob: &Problem, start: Point, cfg: &OptimizerConfig) -> LocalResult {
    let mut p = start;
    let mut history: VecDeque<(DVector<f64>, DVector<f64>)> = VecDeque::new();
    let mut iterations = 0;
    let mut stalls = 0;
    while iterations < cfg.max_iters && p.grad.norm() >= cfg.grad_tol && !prob.at_floor(&p) && stalls < STALL_LIMIT {
        iterations += 1;
        let mut dir = two_loop(&p.grad, &history);
        if history.is_empty() || p.grad.dot(&dir) >= 0.0 {
            history.clear();
            dir = -&p.grad / p.grad.norm().max(1.0);
        }
        let next = line_search(prob, &p, &dir, 1.0, true).or_else(|| {
            if history.is_empty() {
                return None;
            }
            history.clear();
            let dir = -&p.grad / p.grad.norm().max(1.0);
            line_search(prob, &p, &dir, 1.0, true)
        });
        let Some(q) = next else { break };
        stalls = if stalled(&p, &q) { stalls + 1 } else { 0 };
        let s = &q.x - &p.x;
        let y = &q.grad - &p.grad;
        if s.dot(&y) > 1e-12 * s.norm() * y.norm() {
            history.push_back((s, y));
            if history.len() > cfg.lbfgs_memory {
                history.pop_front();
            }
        }
        p = q;
    }
    LocalResult { point: p, iterations }
}

fn momentum(prob: &Problem, start: Point, cfg: &OptimizerConfig) -> LocalResult {
    let mut p = start;
    let mut velocity = DVector::zeros(p.x.len());
    let mut iterations = 0;
    while iterations < cfg.max_iters && p.grad.norm() >= cfg.grad_tol && !prob.at_floor(&p) {
        iterations += 1;
        velocity = velocity * cfg.momentum - &p.grad * cfg.learning_rate;
        match line_search(prob, &p, &velocity, 1.0, false) {
            Some(q) => {
                velocity = &q.x - &p.x;
                p = q;
            }
            None => break,
        }
    }
    LocalResult { point: p, iterations }
}

/// Newton steps on the finite-difference Hessian restricted to its
/// well-conditioned positive eigenspace. A step is kept only if it reduces
/// the gradient norm without raising the loss beyond rounding.
pub(crate) fn polish(prob: &Problem, start: Point, cfg: &OptimizerConfig) -> Point {
    let mut p = start;
    for _ in 0..cfg.polish_steps {
        if p.grad.norm() < cfg.grad_tol * 1e-3 || prob.at_floor(&p) {
            break;
        }
        let Some(h) = prob.hessian(&p.x, cfg.hessian_step) else { break };
        let Ok(eig) = matrixkit::sym_eig(&h) else { break };
        let top = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v));
        if top <= 0.0 {
            break;
        }
        let mut dir = DVector::zeros(p.x.len());
        for (i, &lam) in eig.eigenvalues.iter().enumerate() {
            if lam > 1e-9 * top {
                let v = eig.eigenvectors.column(i);
                dir -= v * (v.dot(&p.grad) / lam);
            }
        }
        let tol = 1e-12 * (1.0 + p.loss().abs());
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..20 {
            if let Some(q) = prob.eval(&(&p.x + &dir * t)) {
                if q.grad.norm() < p.grad.norm() && q.loss() <= p.loss() + tol {
                    accepted = Some(q);
                    break;
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some(q) => p = q,
            None => break,
        }
    }
    p
}

pub(crate) fn minimize(prob: &Problem, start: Point, cfg: &OptimizerConfig) -> LocalResult {
    let r = match cfg.method {
        Method::Lbfgs => lbfgs(prob, start, cfg),
        Method::Momentum => momentum(prob, start, cfg),
    };
    LocalResult {
        point: polish(prob, r.point, cfg),
        iterations: r.iterations,
    }
}
