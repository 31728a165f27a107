//! The tasks used throughout the tests and the command-line tool.

use crate::matrixkit::Matrix;
use crate::model::{CostWeights, WorldModel};

use super::{NonlinearPlant, Physics};

/// Control step of the physical plants, in seconds.
pub const DT: f64 = 0.02;

/// Unstable scalar world `d = 1.2`, `e = 1`, `q = r = 1`.
pub fn scalar_world() -> WorldModel {
    WorldModel::scalar(1.2, 1.0, 1.0, 1.0).expect("valid scalar world")
}

/// Scalar weights with `C_a = 0.1`.
pub fn scalar_weights(c_s: f64, c_b: f64) -> CostWeights {
    CostWeights::scalar(c_s, 0.1, c_b).expect("valid scalar weights")
}

/// Cart-pole with isotropic process noise `1e-4·I` and sensor noise ten
/// times larger on the velocities than on the positions.
pub fn cartpole_plant() -> NonlinearPlant {
    NonlinearPlant::new(
        Physics::cartpole(),
        Matrix::identity(4, 4) * 1e-4,
        Matrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.01, 0.1, 0.01, 0.1])),
    )
}

/// `C_s = I`, `C_a = 0.01`. Inference is lossy from `C_b ≈ 30`.
pub fn cartpole_weights(c_b: f64) -> CostWeights {
    CostWeights::new(Matrix::identity(4, 4), Matrix::identity(1, 1) * 0.01, c_b).expect("valid weights")
}

/// Planar drone with process noise `3e-5·I` and sensor noise `1e-3` on
/// positions and tilt, `1e-2` on their rates.
pub fn drone_plant() -> NonlinearPlant {
    NonlinearPlant::new(
        Physics::planar_drone(),
        Matrix::identity(6, 6) * 3e-5,
        Matrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1e-3, 1e-3, 1e-3, 1e-2, 1e-2, 1e-2])),
    )
}

/// Position-weighted `C_s = diag(3, 3, 1, 1, 1, 1)`, `C_a = 0.01·I`, `C_b = 1`.
pub fn drone_weights() -> CostWeights {
    CostWeights::new(
        Matrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 3.0, 1.0, 1.0, 1.0, 1.0])),
        Matrix::identity(2, 2) * 0.01,
        1.0,
    )
    .expect("valid weights")
}
