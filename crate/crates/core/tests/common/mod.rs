#![allow(dead_code)]

use frugal_core::matrixkit::{self, Matrix};
use frugal_core::{CostWeights, WorldModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(r: usize, c: usize, scale: f64, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.random_range(-scale..scale))
}

/// Random matrix with spectral radius `rho`.
pub fn with_radius(n: usize, rho: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let a = uniform(n, n, 1.0, rng);
    let r = matrixkit::spectral_radius(&a).unwrap();
    a * (rho / r)
}

/// Random world with `n` states and `m` actions, isotropic noise and a
/// transition matrix that may be unstable.
pub fn random_world(n: usize, m: usize, rng: &mut ChaCha8Rng) -> WorldModel {
    loop {
        let rho = rng.random_range(0.5..1.3);
        let d = with_radius(n, rho, rng);
        let e = uniform(n, m, 1.0, rng);
        let q = rng.random_range(0.5..2.0);
        let r = rng.random_range(0.5..2.0);
        if let Ok(w) = WorldModel::new(d, e, Matrix::identity(n, n) * q, Matrix::identity(n, n) * r) {
            let gram = &w.e * w.e.transpose();
            if m >= n && matrixkit::min_eigenvalue(&gram).unwrap() < 0.05 {
                continue;
            }
            return w;
        }
    }
}

pub fn random_weights(n: usize, m: usize, c_b: f64, rng: &mut ChaCha8Rng) -> CostWeights {
    CostWeights::new(
        Matrix::identity(n, n) * rng.random_range(0.5..2.0),
        Matrix::identity(m, m) * rng.random_range(0.05..0.5),
        c_b,
    )
    .unwrap()
}

pub fn rel(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

/// A stabilizing strategy near the static LQR gain with random `Φ`.
pub fn random_stable_strategy(
    world: &WorldModel,
    weights: &CostWeights,
    rng: &mut ChaCha8Rng,
) -> frugal_core::Strategy {
    let lqr = frugal_core::optimizer::lqr_gain(world, weights).unwrap();
    let (n, m) = (world.n(), world.m());
    loop {
        let s = frugal_core::Strategy {
            phi: uniform(m, m, 0.4, rng),
            psi: &lqr + uniform(m, n, 0.1, rng),
        };
        if frugal_core::equilibrium::steady_state(world, weights, &s)
            .map(|r| r.spectral_radius < 0.97)
            .unwrap_or(false)
        {
            return s;
        }
    }
}
