use serde::{Deserialize, Serialize};

use super::{rng_for, GaussianSource, Result, Rollout, SimError};
use crate::equilibrium;
use crate::matrixkit::{Matrix, Vector};
use crate::model::{CostWeights, Strategy, WorldModel};

/// Continuous-time rigid-body models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Physics {
    /// Frictionless cart with a uniform pole; state `(x, ẋ, γ, γ̇)` with γ
    /// measured from upright, action the horizontal force on the cart.
    Cartpole {
        cart_mass: f64,
        pole_mass: f64,
        half_length: f64,
        gravity: f64,
    },
    /// Planar birotor; state `(x, y, δ, ẋ, ẏ, δ̇)`, actions the two thrust
    /// deviations from hover.
    PlanarDrone {
        mass: f64,
        arm: f64,
        inertia: f64,
        gravity: f64,
    },
}

impl Physics {
    pub fn cartpole() -> Self {
        Physics::Cartpole {
            cart_mass: 1.0,
            pole_mass: 0.1,
            half_length: 0.5,
            gravity: 9.8,
        }
    }

    pub fn planar_drone() -> Self {
        Physics::PlanarDrone {
            mass: 0.5,
            arm: 0.2,
            inertia: 0.01,
            gravity: 9.8,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Physics::Cartpole { .. } => "cartpole",
            Physics::PlanarDrone { .. } => "planar_drone",
        }
    }

    pub fn n(&self) -> usize {
        match self {
            Physics::Cartpole { .. } => 4,
            Physics::PlanarDrone { .. } => 6,
        }
    }

    pub fn m(&self) -> usize {
        match self {
            Physics::Cartpole { .. } => 1,
            Physics::PlanarDrone { .. } => 2,
        }
    }

    pub fn parameter_names(&self) -> &'static [&'static str] {
        match self {
            Physics::Cartpole { .. } => &["cart_mass", "pole_mass", "half_length", "gravity"],
            Physics::PlanarDrone { .. } => &["mass", "arm", "inertia", "gravity"],
        }
    }

    pub fn parameter(&self, name: &str) -> Option<f64> {
        match (self, name) {
            (Physics::Cartpole { cart_mass, .. }, "cart_mass") => Some(*cart_mass),
            (Physics::Cartpole { pole_mass, .. }, "pole_mass") => Some(*pole_mass),
            (Physics::Cartpole { half_length, .. }, "half_length") => Some(*half_length),
            (Physics::Cartpole { gravity, .. }, "gravity") => Some(*gravity),
            (Physics::PlanarDrone { mass, .. }, "mass") => Some(*mass),
            (Physics::PlanarDrone { arm, .. }, "arm") => Some(*arm),
            (Physics::PlanarDrone { inertia, .. }, "inertia") => Some(*inertia),
            (Physics::PlanarDrone { gravity, .. }, "gravity") => Some(*gravity),
            _ => None,
        }
    }

    pub fn with_parameter(&self, name: &str, value: f64) -> Result<Self> {
        let mut p = self.clone();
        let slot = match (&mut p, name) {
            (Physics::Cartpole { cart_mass, .. }, "cart_mass") => cart_mass,
            (Physics::Cartpole { pole_mass, .. }, "pole_mass") => pole_mass,
            (Physics::Cartpole { half_length, .. }, "half_length") => half_length,
            (Physics::Cartpole { gravity, .. }, "gravity") => gravity,
            (Physics::PlanarDrone { mass, .. }, "mass") => mass,
            (Physics::PlanarDrone { arm, .. }, "arm") => arm,
            (Physics::PlanarDrone { inertia, .. }, "inertia") => inertia,
            (Physics::PlanarDrone { gravity, .. }, "gravity") => gravity,
            _ => return Err(SimError::UnknownParameter(name.into())),
        };
        *slot = value;
        Ok(p)
    }

    /// `ṡ = f(s, u)`.
    pub fn derivative(&self, s: &Vector, u: &Vector) -> Vector {
        match *self {
            Physics::Cartpole {
                cart_mass,
                pole_mass,
                half_length: l,
                gravity: g,
            } => {
                let total = cart_mass + pole_mass;
                let (sin, cos) = s[2].sin_cos();
                let omega = s[3];
                let temp = (u[0] + pole_mass * l * omega * omega * sin) / total;
                let alpha = (g * sin - cos * temp) / (l * (4.0 / 3.0 - pole_mass * cos * cos / total));
                let acc = temp - pole_mass * l * alpha * cos / total;
                Vector::from_vec(vec![s[1], acc, omega, alpha])
            }
            Physics::PlanarDrone {
                mass,
                arm,
                inertia,
                gravity: g,
            } => {
                let thrust = mass * g + u[0] + u[1];
                let (sin, cos) = s[2].sin_cos();
                Vector::from_vec(vec![
                    s[3],
                    s[4],
                    s[5],
                    -thrust * sin / mass,
                    thrust * cos / mass - g,
                    arm * (u[1] - u[0]) / inertia,
                ])
            }
        }
    }

    /// Classical fourth-order Runge–Kutta over `h`.
    pub fn rk4_step(&self, s: &Vector, u: &Vector, h: f64) -> Vector {
        let k1 = self.derivative(s, u);
        let k2 = self.derivative(&(s + &k1 * (h / 2.0)), u);
        let k3 = self.derivative(&(s + &k2 * (h / 2.0)), u);
        let k4 = self.derivative(&(s + &k3 * h), u);
        s + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
    }

    /// Total mechanical energy of the unforced cart-pole, for integrator
    /// checks. The drone's thrust does work, so it has none.
    pub fn energy(&self, s: &Vector) -> Option<f64> {
        match *self {
            Physics::Cartpole {
                cart_mass,
                pole_mass,
                half_length: l,
                gravity: g,
            } => {
                let (v, theta, omega) = (s[1], s[2], s[3]);
                Some(
                    0.5 * (cart_mass + pole_mass) * v * v
                        + pole_mass * l * v * omega * theta.cos()
                        + 0.5 * (4.0 / 3.0) * pole_mass * l * l * omega * omega
                        + pole_mass * g * l * theta.cos(),
                )
            }
            Physics::PlanarDrone { .. } => None,
        }
    }
}

/// A physical plant with sensor and process noise around a target state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonlinearPlant {
    pub physics: Physics,
    /// Process-noise covariance added after each step.
    #[serde(with = "crate::model::rows")]
    pub q: Matrix,
    /// Observation-noise covariance.
    #[serde(with = "crate::model::rows")]
    pub r: Matrix,
    pub target: Vec<f64>,
    pub nominal_action: Vec<f64>,
    /// Runge–Kutta substeps per control step.
    pub substeps: usize,
    /// State norm treated as divergence.
    pub blowup: f64,
}

impl NonlinearPlant {
    pub fn new(physics: Physics, q: Matrix, r: Matrix) -> Self {
        let (n, m) = (physics.n(), physics.m());
        Self {
            physics,
            q,
            r,
            target: vec![0.0; n],
            nominal_action: vec![0.0; m],
            substeps: 10,
            blowup: 1e3,
        }
    }

    pub fn n(&self) -> usize {
        self.physics.n()
    }

    pub fn m(&self) -> usize {
        self.physics.m()
    }

    fn target(&self) -> Vector {
        Vector::from_column_slice(&self.target)
    }

    fn nominal(&self) -> Vector {
        Vector::from_column_slice(&self.nominal_action)
    }

    /// One control step of the noiseless dynamics.
    pub fn step(&self, s: &Vector, u: &Vector, dt: f64) -> Vector {
        let h = dt / self.substeps.max(1) as f64;
        (0..self.substeps.max(1)).fold(s.clone(), |x, _| self.physics.rk4_step(&x, u, h))
    }

    pub fn with_parameter(&self, name: &str, value: f64) -> Result<Self> {
        Ok(Self {
            physics: self.physics.with_parameter(name, value)?,
            ..self.clone()
        })
    }
}

/// Euler discretization of the central-difference Jacobians at the target:
/// `D = I + dt·J_s`, `E = dt·J_a`.
pub fn linearize(plant: &NonlinearPlant, dt: f64) -> Result<WorldModel> {
    if !(dt > 0.0) {
        return Err(SimError::InvalidSetting("dt must be positive".into()));
    }
    let (n, m) = (plant.n(), plant.m());
    let s0 = plant.target();
    let u0 = plant.nominal();
    let residual = (plant.step(&s0, &u0, dt) - &s0).norm();
    if !(residual <= 1e-9) {
        return Err(SimError::NotEquilibrium(residual));
    }
    let h = 1e-6;
    let f = |s: &Vector, u: &Vector| plant.physics.derivative(s, u);
    let mut js = Matrix::zeros(n, n);
    for i in 0..n {
        let mut sp = s0.clone();
        let mut sm = s0.clone();
        sp[i] += h;
        sm[i] -= h;
        js.set_column(i, &((f(&sp, &u0) - f(&sm, &u0)) / (2.0 * h)));
    }
    let mut ja = Matrix::zeros(n, m);
    for i in 0..m {
        let mut up = u0.clone();
        let mut um = u0.clone();
        up[i] += h;
        um[i] -= h;
        ja.set_column(i, &((f(&s0, &up) - f(&s0, &um)) / (2.0 * h)));
    }
    let d = Matrix::identity(n, n) + js * dt;
    let e = ja * dt;
    Ok(WorldModel::new(d, e, plant.q.clone(), plant.r.clone())?)
}

/// Runs a strategy on the nonlinear plant: `o_t = s_t + v`,
/// `a_t = Φa_{t−1} + Ψ(o_t − target)`, applied as `u = nominal + a_t` for one
/// step of the integrated dynamics, after which process noise is added.
pub fn rollout_nonlinear(
    plant: &NonlinearPlant,
    s: &Strategy,
    steps: usize,
    dt: f64,
    initial_state: &[f64],
    seed: u64,
) -> Result<Rollout> {
    let (n, m) = (plant.n(), plant.m());
    if initial_state.len() != n || s.n() != n || s.m() != m {
        return Err(SimError::InvalidSetting(format!("plant {} has n = {n}, m = {m}", plant.physics.name())));
    }
    if !(dt > 0.0) {
        return Err(SimError::InvalidSetting("dt must be positive".into()));
    }
    let process = GaussianSource::new(&plant.q)?;
    let sensor = GaussianSource::new(&plant.r)?;
    let mut rng = rng_for(seed, 0);
    let target = plant.target();
    let nominal = plant.nominal();
    let mut state = Vector::from_column_slice(initial_state);
    let mut action = Vector::zeros(m);
    let mut rollout = Rollout {
        states: Vec::with_capacity(steps),
        observations: Vec::with_capacity(steps),
        actions: Vec::with_capacity(steps),
        dt: Some(dt),
        seed,
    };
    for step in 0..steps {
        let obs = &state + sensor.sample(&mut rng);
        action = &s.phi * &action + &s.psi * (&obs - &target);
        let next = plant.step(&state, &(&nominal + &action), dt) + process.sample(&mut rng);
        rollout.states.push(state);
        rollout.observations.push(obs);
        rollout.actions.push(action.clone());
        let norm = next.norm();
        if !(norm <= plant.blowup) {
            return Err(SimError::Diverged { step, norm });
        }
        state = next;
    }
    Ok(rollout)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSensitivity {
    pub name: String,
    /// `p·∂ℓ/∂p` by central differences; infinite when a perturbed loop is
    /// unstable.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sensitivity {
    pub parameters: Vec<ParameterSensitivity>,
    /// Euclidean norm of the per-parameter scores.
    pub norm: f64,
}

/// Relative-perturbation sensitivity of the equilibrium loss of a fixed
/// strategy to the plant's physical parameters.
pub fn sensitivity(
    plant: &NonlinearPlant,
    weights: &CostWeights,
    s: &Strategy,
    names: &[&str],
    rel_step: f64,
    dt: f64,
) -> Result<Sensitivity> {
    if !(rel_step > 0.0 && rel_step < 1.0) {
        return Err(SimError::InvalidSetting("rel_step must lie in (0, 1)".into()));
    }
    let mut parameters = Vec::with_capacity(names.len());
    for &name in names {
        let value = plant
            .physics
            .parameter(name)
            .ok_or_else(|| SimError::UnknownParameter(name.into()))?;
        let mut losses = [0.0; 2];
        for (slot, sign) in losses.iter_mut().zip([1.0, -1.0]) {
            let world = linearize(&plant.with_parameter(name, value * (1.0 + sign * rel_step))?, dt)?;
            *slot = equilibrium::steady_state(&world, weights, s).map_or(f64::INFINITY, |r| r.total_loss);
        }
        let score = if losses.iter().all(|l| l.is_finite()) {
            (losses[0] - losses[1]) / (2.0 * rel_step)
        } else {
            f64::INFINITY
        };
        parameters.push(ParameterSensitivity {
            name: name.into(),
            score,
        });
    }
    let norm = parameters.iter().map(|p| p.score * p.score).sum::<f64>().sqrt();
    Ok(Sensitivity { parameters, norm })
}
