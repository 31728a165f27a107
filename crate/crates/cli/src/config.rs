//! The JSON problem document and its validation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use frugal_core::matrixkit::{self, Matrix};
use frugal_core::model::rows;
use frugal_core::simlab::{self, presets, NonlinearPlant, Physics};
use frugal_core::{CostWeights, OptimizerConfig, Strategy, WorldModel};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub world: WorldSpec,
    pub weights: WeightsSpec,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    /// Master seed for restarts, Θ sampling and simulation noise.
    #[serde(default)]
    pub seed: u64,
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub family: FamilySpec,
    #[serde(default)]
    pub simulation: SimulationSpec,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WorldSpec {
    Matrices {
        #[serde(rename = "D", with = "rows")]
        d: Matrix,
        #[serde(rename = "E", with = "rows")]
        e: Matrix,
        #[serde(rename = "Q", with = "rows")]
        q: Matrix,
        #[serde(rename = "R", with = "rows")]
        r: Matrix,
    },
    Plant {
        name: PlantName,
        /// Overrides of the default physical parameters.
        #[serde(default)]
        parameters: BTreeMap<String, f64>,
        #[serde(default = "default_dt")]
        dt: f64,
        #[serde(rename = "Q", default, deserialize_with = "optional_rows")]
        q: Option<Matrix>,
        #[serde(rename = "R", default, deserialize_with = "optional_rows")]
        r: Option<Matrix>,
        substeps: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantName {
    Cartpole,
    PlanarDrone,
}

fn default_dt() -> f64 {
    presets::DT
}

fn optional_rows<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<Matrix>, D::Error> {
    rows::deserialize(d).map(Some)
}

/// A matrix given as nested rows, or a number meaning that multiple of the
/// identity.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum MatrixOrScalar {
    Scalar(f64),
    Rows(Vec<Vec<f64>>),
}

impl MatrixOrScalar {
    fn resolve(&self, dim: usize, field: &str) -> Result<Matrix, CliError> {
        match self {
            MatrixOrScalar::Scalar(v) => Ok(Matrix::identity(dim, dim) * *v),
            MatrixOrScalar::Rows(r) => {
                let m = matrixkit::from_rows(r).map_err(|e| CliError::Input(format!("{field}: {e}")))?;
                if m.shape() != (dim, dim) {
                    return Err(CliError::Input(format!(
                        "{field}: expected {dim}x{dim}, got {}x{}",
                        m.nrows(),
                        m.ncols()
                    )));
                }
                Ok(m)
            }
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsSpec {
    #[serde(rename = "C_s")]
    pub c_s: MatrixOrScalar,
    #[serde(rename = "C_a")]
    pub c_a: MatrixOrScalar,
    #[serde(rename = "C_b")]
    pub c_b: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(rename = "C_s")]
    pub c_s: Vec<f64>,
    #[serde(rename = "C_b")]
    pub c_b: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FamilySpec {
    /// Θ samples for two or more actions.
    pub samples: usize,
    /// A `solution.json` written by `solve`; solved afresh when absent.
    pub solution: Option<PathBuf>,
}

impl Default for FamilySpec {
    fn default() -> Self {
        Self {
            samples: 32,
            solution: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategySource {
    /// The optimizer's solution.
    Solution,
    /// Every member of the solution's family.
    Family,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedStrategy {
    pub label: String,
    #[serde(flatten)]
    pub strategy: Strategy,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivitySpec {
    /// Defaults to every parameter of the plant.
    pub parameters: Option<Vec<String>>,
    #[serde(default = "default_rel_step")]
    pub rel_step: f64,
}

fn default_rel_step() -> f64 {
    1e-3
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSpec {
    /// Nonlinear trials per strategy (physical plants only).
    pub trials: usize,
    /// Control steps per nonlinear trial.
    pub steps: usize,
    /// Defaults to a 0.1 rad pole offset or a 0.3 m drone offset.
    pub initial_state: Option<Vec<f64>>,
    /// Seconds at the end of each trial judged by the success criterion.
    pub success_window: f64,
    pub linear_trials: usize,
    pub linear_steps: usize,
    pub burn_in: usize,
    pub source: StrategySource,
    /// Explicit strategies; these replace `source`.
    pub strategies: Option<Vec<NamedStrategy>>,
    pub sensitivity: Option<SensitivitySpec>,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        Self {
            trials: 100,
            steps: 500,
            initial_state: None,
            success_window: 2.0,
            linear_trials: 20,
            linear_steps: 20_000,
            burn_in: 500,
            source: StrategySource::Solution,
            strategies: None,
            sensitivity: None,
        }
    }
}

/// The world as the pipelines see it.
pub struct Problem {
    pub world: WorldModel,
    pub weights: CostWeights,
    /// Present for named plants.
    pub plant: Option<(NonlinearPlant, f64)>,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    pub config: ProblemConfig,
    /// Directory of the config file, for relative paths.
    pub base_dir: PathBuf,
}

pub fn load(path: &Path, seed_override: Option<u64>) -> Result<Problem, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
    let config: ProblemConfig =
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("config {}: {e}", path.display())))?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    resolve(config, seed_override, base_dir)
}

fn input(field: &str, e: &dyn std::fmt::Display) -> CliError {
    CliError::Input(format!("{field}: {e}"))
}

fn plant_for(name: PlantName) -> NonlinearPlant {
    match name {
        PlantName::Cartpole => presets::cartpole_plant(),
        PlantName::PlanarDrone => presets::drone_plant(),
    }
}

fn resolve(config: ProblemConfig, seed_override: Option<u64>, base_dir: PathBuf) -> Result<Problem, CliError> {
    let (world, plant) = match &config.world {
        WorldSpec::Matrices { d, e, q, r } => {
            let w = WorldModel::new(d.clone(), e.clone(), q.clone(), r.clone()).map_err(|e| input("world", &e))?;
            (w, None)
        }
        WorldSpec::Plant {
            name,
            parameters,
            dt,
            q,
            r,
            substeps,
        } => {
            let mut plant = plant_for(*name);
            for (k, v) in parameters {
                plant = plant
                    .with_parameter(k, *v)
                    .map_err(|e| input(&format!("world.parameters.{k}"), &e))?;
            }
            if let Some(q) = q {
                plant.q = q.clone();
            }
            if let Some(r) = r {
                plant.r = r.clone();
            }
            if let Some(s) = substeps {
                if *s == 0 {
                    return Err(CliError::Input("world.substeps: must be at least 1".into()));
                }
                plant.substeps = *s;
            }
            if !(*dt > 0.0 && dt.is_finite()) {
                return Err(CliError::Input(format!("world.dt: must be positive, got {dt}")));
            }
            let w = simlab::linearize(&plant, *dt).map_err(|e| input("world", &e))?;
            (w, Some((plant, *dt)))
        }
    };
    let (n, m) = (world.n(), world.m());
    let weights = CostWeights::new(
        config.weights.c_s.resolve(n, "weights.C_s")?,
        config.weights.c_a.resolve(m, "weights.C_a")?,
        config.weights.c_b,
    )
    .map_err(|e| input("weights", &e))?;
    let seed = seed_override.unwrap_or(config.seed);
    let optimizer = OptimizerConfig {
        seed,
        ..config.optimizer.clone()
    };
    optimizer.validate().map_err(|e| input("optimizer", &e))?;
    validate_sections(&config, &world, plant.as_ref().map(|(p, _)| p))?;
    Ok(Problem {
        world,
        weights,
        plant,
        optimizer,
        seed,
        config,
        base_dir,
    })
}

fn validate_sections(config: &ProblemConfig, world: &WorldModel, plant: Option<&NonlinearPlant>) -> Result<(), CliError> {
    if let Some(sweep) = &config.sweep {
        if sweep.c_s.is_empty() || sweep.c_b.is_empty() {
            return Err(CliError::Input("sweep: C_s and C_b grids must be non-empty".into()));
        }
        if let Some(v) = sweep.c_s.iter().chain(&sweep.c_b).find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(CliError::Input(format!("sweep: grid values must be finite and ≥ 0, got {v}")));
        }
    }
    if config.family.samples == 0 {
        return Err(CliError::Input("family.samples: must be at least 1".into()));
    }
    let sim = &config.simulation;
    if sim.linear_trials < 2 {
        return Err(CliError::Input("simulation.linear_trials: at least two trials are needed".into()));
    }
    if sim.linear_steps <= sim.burn_in + 1 {
        return Err(CliError::Input("simulation.linear_steps: must exceed burn_in by at least two".into()));
    }
    if let Some(x0) = &sim.initial_state {
        if x0.len() != world.n() {
            return Err(CliError::Input(format!(
                "simulation.initial_state: expected {} entries, got {}",
                world.n(),
                x0.len()
            )));
        }
    }
    if let Some(list) = &sim.strategies {
        for (i, s) in list.iter().enumerate() {
            s.strategy
                .check_world(world)
                .map_err(|e| CliError::Input(format!("simulation.strategies[{i}]: {e}")))?;
        }
    }
    if let Some(sens) = &sim.sensitivity {
        let Some(plant) = plant else {
            return Err(CliError::Input(
                "simulation.sensitivity: needs a named plant with physical parameters; a matrix world has none".into(),
            ));
        };
        if !(sens.rel_step > 0.0 && sens.rel_step < 1.0) {
            return Err(CliError::Input("simulation.sensitivity.rel_step: must lie in (0, 1)".into()));
        }
        for p in sens.parameters.iter().flatten() {
            if plant.physics.parameter(p).is_none() {
                return Err(CliError::Input(format!(
                    "simulation.sensitivity.parameters: unknown parameter `{p}` for {} (known: {})",
                    plant.physics.name(),
                    plant.physics.parameter_names().join(", ")
                )));
            }
        }
    }
    Ok(())
}

impl Problem {
    pub fn physics(&self) -> Option<&Physics> {
        self.plant.as_ref().map(|(p, _)| &p.physics)
    }
}
