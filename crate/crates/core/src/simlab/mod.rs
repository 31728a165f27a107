//! Simulation: closed-loop rollouts on linear worlds and nonlinear plants,
//! empirical costs, and sensitivity to physical parameters.

mod plants;
pub mod presets;

use std::io::{self, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use plants::{linearize, rollout_nonlinear, sensitivity, NonlinearPlant, ParameterSensitivity, Physics, Sensitivity};

use crate::equilibrium::{self, EquilibriumError};
use crate::matrixkit::{self, Matrix, MatrixError, Vector};
use crate::model::{CostWeights, ModelError, Strategy, WorldModel};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("state diverged at step {step} (norm {norm:e})")]
    Diverged { step: usize, norm: f64 },
    #[error("target is not an equilibrium of the plant (residual {0:e})")]
    NotEquilibrium(f64),
    #[error("unknown physical parameter {0:?}")]
    UnknownParameter(String),
    #[error("invalid simulation setting: {0}")]
    InvalidSetting(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

pub type Result<T> = std::result::Result<T, SimError>;

/// Time series of one closed-loop run.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub states: Vec<Vector>,
    pub observations: Vec<Vector>,
    pub actions: Vec<Vector>,
    /// Step length in seconds for physical plants.
    pub dt: Option<f64>,
    pub seed: u64,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Number of sign flips of one action component between consecutive
    /// steps.
    pub fn sign_changes(&self, component: usize) -> usize {
        self.actions
            .windows(2)
            .filter(|w| w[0][component].signum() != w[1][component].signum())
            .count()
    }

    /// CSV with one row per step: `t`, states, observations, actions.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "# schema: frugal-rollout v1")?;
        let n = self.states.first().map_or(0, |v| v.len());
        let m = self.actions.first().map_or(0, |v| v.len());
        let mut header = vec!["t".to_string()];
        header.extend((0..n).map(|i| format!("s{i}")));
        header.extend((0..n).map(|i| format!("o{i}")));
        header.extend((0..m).map(|i| format!("a{i}")));
        writeln!(out, "{}", header.join(","))?;
        for t in 0..self.len() {
            let time = self.dt.map_or(t as f64, |dt| t as f64 * dt);
            let mut row = vec![fmt_sig(time)];
            for v in [&self.states[t], &self.observations[t], &self.actions[t]] {
                row.extend(v.iter().map(|&x| fmt_sig(x)));
            }
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Twelve significant digits.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        "0".into()
    } else if x.is_finite() {
        format!("{x:.11e}")
    } else {
        x.to_string()
    }
}

/// Draws `N(0, C)` through a fixed square-root factor.
pub(crate) struct GaussianSource {
    factor: Matrix,
}

impl GaussianSource {
    pub fn new(cov: &Matrix) -> Result<Self> {
        Ok(Self {
            factor: matrixkit::psd_sqrt(cov)?,
        })
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Vector {
        let z = Vector::from_fn(self.factor.ncols(), |_, _| StandardNormal.sample(rng));
        &self.factor * z
    }
}

pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Linear closed loop from rest: `s_t = Ds_{t−1} + Ea_{t−1} + w`,
/// `o_t = s_t + v`, `a_t = Φa_{t−1} + Ψo_t`.
pub fn rollout_linear(world: &WorldModel, s: &Strategy, steps: usize, seed: u64) -> Result<Rollout> {
    s.check_world(world)?;
    let mut states = Vec::with_capacity(steps);
    let mut observations = Vec::with_capacity(steps);
    let mut actions = Vec::with_capacity(steps);
    simulate_linear(world, s, steps, seed, 0, |st, ob, ac| {
        states.push(st.clone());
        observations.push(ob.clone());
        actions.push(ac.clone());
    })?;
    Ok(Rollout {
        states,
        observations,
        actions,
        dt: None,
        seed,
    })
}

fn simulate_linear(
    world: &WorldModel,
    s: &Strategy,
    steps: usize,
    seed: u64,
    stream: u64,
    mut visit: impl FnMut(&Vector, &Vector, &Vector),
) -> Result<()> {
    let process = GaussianSource::new(&world.q)?;
    let sensor = GaussianSource::new(&world.r)?;
    let mut rng = rng_for(seed, stream);
    let mut state = Vector::zeros(world.n());
    let mut action = Vector::zeros(world.m());
    for t in 0..steps {
        if t > 0 {
            state = &world.d * &state + &world.e * &action + process.sample(&mut rng);
        }
        let obs = &state + sensor.sample(&mut rng);
        action = &s.phi * &action + &s.psi * &obs;
        visit(&state, &obs, &action);
    }
    Ok(())
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let k = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / k;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
        Self {
            mean,
            se: (var / k).sqrt(),
        }
    }

    /// `mean ± width·se` intervals intersect.
    pub fn overlaps(&self, other: &Estimate, width: f64) -> bool {
        (self.mean - other.mean).abs() <= width * (self.se + other.se)
    }

    /// `|mean − value| ≤ width·se`.
    pub fn covers(&self, value: f64, width: f64) -> bool {
        (self.mean - value).abs() <= width * self.se
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSample {
    pub trials: usize,
    pub state_cost: Estimate,
    pub action_cost: Estimate,
    pub information_bits: Estimate,
    pub total: Estimate,
}

impl CostSample {
    /// Every component's interval overlaps the other sample's.
    pub fn overlaps(&self, other: &CostSample, width: f64) -> bool {
        self.state_cost.overlaps(&other.state_cost, width)
            && self.action_cost.overlaps(&other.action_cost, width)
            && self.information_bits.overlaps(&other.information_bits, width)
            && self.total.overlaps(&other.total, width)
    }
}

/// Running second moments of `z = [s; a]`.
struct Moments {
    sum: Vector,
    outer: Matrix,
    count: usize,
}

impl Moments {
    fn new(dim: usize) -> Self {
        Self {
            sum: Vector::zeros(dim),
            outer: Matrix::zeros(dim, dim),
            count: 0,
        }
    }

    fn push(&mut self, z: &Vector) {
        self.sum += z;
        self.outer.ger(1.0, z, z, 1.0);
        self.count += 1;
    }

    fn covariance(&self) -> Matrix {
        let k = self.count as f64;
        let mean = &self.sum / k;
        matrixkit::symmetrize(&((&self.outer - &mean * mean.transpose() * k) / (k - 1.0)))
    }
}

fn joint(state: &Vector, action: &Vector) -> Vector {
    Vector::from_iterator(state.len() + action.len(), state.iter().chain(action.iter()).copied())
}

/// Gaussian information of an empirical joint covariance; zero when the
/// cross block vanishes identically.
fn empirical_bits(sigma: &Matrix, n: usize) -> f64 {
    let cross = sigma.view((0, n), (n, sigma.ncols() - n));
    if cross.iter().all(|&v| v == 0.0) {
        return 0.0;
    }
    equilibrium::information_bits(sigma, n).unwrap_or(f64::NAN)
}

/// Per-trial time averages after `burn_in`, aggregated across independent
/// trials. Trial `k` uses random stream `k` of `seed`.
pub fn empirical_costs(
    world: &WorldModel,
    weights: &CostWeights,
    s: &Strategy,
    trials: usize,
    steps: usize,
    burn_in: usize,
    seed: u64,
) -> Result<CostSample> {
    if trials < 2 {
        return Err(SimError::InvalidSetting("at least two trials are needed".into()));
    }
    if steps <= burn_in + 1 {
        return Err(SimError::InvalidSetting("steps must exceed burn_in by at least two".into()));
    }
    s.check_world(world)?;
    weights.check_world(world)?;
    let n = world.n();
    let per_trial: Vec<Result<[f64; 4]>> = (0..trials)
        .into_par_iter()
        .map(|k| {
            let mut state_cost = 0.0;
            let mut action_cost = 0.0;
            let mut moments = Moments::new(n + world.m());
            let mut t = 0;
            simulate_linear(world, s, steps, seed, k as u64, |st, _, ac| {
                if t >= burn_in {
                    state_cost += st.dot(&(&weights.c_s * st));
                    action_cost += ac.dot(&(&weights.c_a * ac));
                    moments.push(&joint(st, ac));
                }
                t += 1;
            })?;
            let count = moments.count as f64;
            let bits = empirical_bits(&moments.covariance(), n);
            let (sc, ac) = (state_cost / count, action_cost / count);
            Ok([sc, ac, bits, sc + ac + weights.c_b * bits])
        })
        .collect();
    let per_trial = per_trial.into_iter().collect::<Result<Vec<_>>>()?;
    let column = |i: usize| Estimate::from_samples(&per_trial.iter().map(|r| r[i]).collect::<Vec<_>>());
    Ok(CostSample {
        trials,
        state_cost: column(0),
        action_cost: column(1),
        information_bits: column(2),
        total: column(3),
    })
}

/// Empirical covariance of `[s; a]` over one long run, with batch-means
/// standard errors per entry.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCovariance {
    pub mean: Matrix,
    pub se: Matrix,
}

pub fn empirical_covariance(
    world: &WorldModel,
    s: &Strategy,
    steps: usize,
    burn_in: usize,
    batches: usize,
    seed: u64,
) -> Result<EmpiricalCovariance> {
    if batches < 2 || steps <= burn_in + 2 * batches {
        return Err(SimError::InvalidSetting("need at least two batches of two samples".into()));
    }
    s.check_world(world)?;
    let dim = world.n() + world.m();
    let batch_len = (steps - burn_in) / batches;
    let mut per_batch = Vec::with_capacity(batches);
    let mut moments = Moments::new(dim);
    let mut t = 0;
    simulate_linear(world, s, burn_in + batch_len * batches, seed, 0, |st, _, ac| {
        if t >= burn_in {
            moments.push(&joint(st, ac));
            if moments.count == batch_len {
                // The process mean is zero; the uncentered second moment is
                // an unbiased covariance estimate.
                per_batch.push(&moments.outer / moments.count as f64);
                moments = Moments::new(dim);
            }
        }
        t += 1;
    })?;
    let k = per_batch.len() as f64;
    let mean = per_batch.iter().fold(Matrix::zeros(dim, dim), |a, b| a + b) / k;
    let var = per_batch
        .iter()
        .fold(Matrix::zeros(dim, dim), |a, b| a + (b - &mean).map(|x| x * x))
        / (k - 1.0);
    Ok(EmpiricalCovariance {
        mean,
        se: var.map(|v| (v / k).sqrt()),
    })
}
