mod common;

use common::{rng, uniform, with_radius};
use frugal_core::matrixkit::{self, Matrix, Vector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn spd(n: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let a = uniform(n, n, 1.0, rng);
    &a * a.transpose() + Matrix::identity(n, n) * 0.1
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dlyap_residual_is_small(seed in any::<u64>(), n in 1usize..7, rho in 0.0f64..0.98) {
        let mut r = rng(seed);
        let m = with_radius(n, rho, &mut r);
        let ups = spd(n, &mut r);
        let x = matrixkit::solve_dlyap(&m, &ups).unwrap();
        let res = (&x - &m * &x * m.transpose() - &ups).norm();
        prop_assert!(res <= 1e-10 * (1.0 + x.norm()), "residual {res:e}");
        prop_assert!(matrixkit::max_asymmetry(&x) <= 1e-10 * (1.0 + x.norm()));
    }

    #[test]
    fn dlyap_matches_truncated_series(seed in any::<u64>(), n in 1usize..5, rho in 0.0f64..0.8) {
        let mut r = rng(seed);
        let m = with_radius(n, rho, &mut r);
        let ups = spd(n, &mut r);
        let x = matrixkit::solve_dlyap(&m, &ups).unwrap();
        let mut series = Matrix::zeros(n, n);
        let mut power = Matrix::identity(n, n);
        for _ in 0..400 {
            series += &power * &ups * power.transpose();
            power = &m * power;
        }
        prop_assert!(common::rel(&x, &series) < 1e-9);
    }

    #[test]
    fn pinv_penrose_identities(seed in any::<u64>(), rows in 1usize..6, cols in 1usize..6, rank_cut in 0usize..3) {
        let mut r = rng(seed);
        let k = rows.min(cols).saturating_sub(rank_cut).max(1);
        let a = uniform(rows, k, 1.0, &mut r) * uniform(k, cols, 1.0, &mut r);
        let p = matrixkit::pinv(&a);
        let tol = 1e-9 * (1.0 + a.norm() * p.norm());
        prop_assert!((&a * &p * &a - &a).norm() < tol);
        prop_assert!((&p * &a * &p - &p).norm() < tol * (1.0 + p.norm()));
        let ap = &a * &p;
        let pa = &p * &a;
        prop_assert!((&ap - ap.transpose()).norm() < tol);
        prop_assert!((&pa - pa.transpose()).norm() < tol);
    }

    #[test]
    fn symmetric_eigen_reconstructs(seed in any::<u64>(), n in 1usize..7) {
        let mut r = rng(seed);
        let a = uniform(n, n, 1.0, &mut r);
        let s = matrixkit::symmetrize(&a);
        let eig = matrixkit::sym_eig(&s).unwrap();
        prop_assert!((eig.reconstruct() - &s).norm() < 1e-12 * (1.0 + s.norm()));
        let u = &eig.eigenvectors;
        prop_assert!((u.transpose() * u - Matrix::identity(n, n)).norm() < 1e-12);
        prop_assert!(eig.eigenvalues.as_slice().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn psd_factor_reproduces_matrix(seed in any::<u64>(), n in 1usize..6) {
        let mut r = rng(seed);
        let s = spd(n, &mut r);
        let root = matrixkit::psd_sqrt(&s).unwrap();
        prop_assert!((&root * root.transpose() - &s).norm() < 1e-10 * (1.0 + s.norm()));
    }

    #[test]
    fn log_det_matches_product_of_eigenvalues(seed in any::<u64>(), n in 1usize..6) {
        let mut r = rng(seed);
        let s = spd(n, &mut r);
        let expected: f64 = matrixkit::sym_eig(&s).unwrap().eigenvalues.iter().map(|l| l.ln()).sum();
        prop_assert!((matrixkit::log_det_spd(&s).unwrap() - expected).abs() < 1e-10 * (1.0 + expected.abs()));
    }
}

#[test]
fn two_by_two_eigenvalues_closed_form() {
    let s = Matrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
    let eig = matrixkit::sym_eig(&s).unwrap();
    let (mid, half) = (2.5, (0.25f64 + 1.0).sqrt());
    assert!((eig.eigenvalues[0] - (mid + half)).abs() < 1e-14);
    assert!((eig.eigenvalues[1] - (mid - half)).abs() < 1e-14);
}

#[test]
fn pinv_of_rank_one() {
    let a = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
    let expected = a.transpose() / 25.0;
    assert!((matrixkit::pinv(&a) - expected).norm() < 1e-14);
}

#[test]
fn unstable_dlyap_rejected() {
    let m = Matrix::from_row_slice(2, 2, &[1.1, 0.0, 0.0, 0.5]);
    assert!(matches!(
        matrixkit::solve_dlyap(&m, &Matrix::identity(2, 2)),
        Err(matrixkit::MatrixError::UnstableSystem { .. })
    ));
}

#[test]
fn scalar_riccati_closed_form() {
    // x = a²x − (abx)²/(b²x + r) + q, solved as a quadratic in x.
    let (a, b, q, r) = (1.2, 1.0, 1.0, 1.0);
    let x = matrixkit::solve_dare(
        &Matrix::from_element(1, 1, a),
        &Matrix::from_element(1, 1, b),
        &Matrix::from_element(1, 1, q),
        &Matrix::from_element(1, 1, r),
    )
    .unwrap()[(0, 0)];
    // b²x² + (r − a²r − qb²)x − qr = 0
    let (qa, qb, qc) = (b * b, r - a * a * r - q * b * b, -q * r);
    let root = (-qb + (qb * qb - 4.0 * qa * qc).sqrt()) / (2.0 * qa);
    assert!((x - root).abs() < 1e-10);
}

/// Time-averaged outer products of `x_{t+1} = M x_t + w` converge to the
/// Lyapunov solution.
#[test]
fn dlyap_matches_monte_carlo() {
    let mut r = rng(11);
    let n = 4;
    let m = with_radius(n, 0.9, &mut r);
    let ups = spd(n, &mut r) * 0.5;
    let x = matrixkit::solve_dlyap(&m, &ups).unwrap();
    let chol = ups.clone().cholesky().unwrap().l();
    let mut sim = ChaCha8Rng::seed_from_u64(5);
    let steps = 1_000_000;
    let burn = 1_000;
    let batches = 50;
    let per = (steps - burn) / batches;
    let mut state = Vector::zeros(n);
    let mut means = Vec::new();
    let mut acc = Matrix::zeros(n, n);
    for t in 0..burn + per * batches {
        let w = Vector::from_fn(n, |_, _| StandardNormal.sample(&mut sim));
        state = &m * &state + &chol * w;
        if t >= burn {
            acc.ger(1.0, &state, &state, 1.0);
            if (t - burn + 1) % per == 0 {
                means.push(&acc / per as f64);
                acc = Matrix::zeros(n, n);
            }
        }
    }
    let k = means.len() as f64;
    let mean = means.iter().fold(Matrix::zeros(n, n), |a, b| a + b) / k;
    for i in 0..n {
        for j in 0..n {
            let var = means.iter().map(|b| (b[(i, j)] - mean[(i, j)]).powi(2)).sum::<f64>() / (k - 1.0);
            let se = (var / k).sqrt();
            assert!(
                (mean[(i, j)] - x[(i, j)]).abs() <= 3.0 * se + 1e-12,
                "entry ({i},{j}): {} vs {} (se {se})",
                mean[(i, j)],
                x[(i, j)]
            );
        }
    }
}
