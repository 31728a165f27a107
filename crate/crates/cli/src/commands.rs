//! The four pipelines. Each one computes everything first and writes its
//! artifacts at the end.

use std::path::Path;

use frugal_core::equilibrium::{self, EquilibriumReport};
use frugal_core::family::{self, FamilyError};
use frugal_core::interpret;
use frugal_core::optimizer::{self, OptimizerError};
use frugal_core::simlab::{self, CostSample, Estimate, NonlinearPlant, Physics, Rollout, SimError};
use frugal_core::{SolveResult, Strategy};
use rayon::prelude::*;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::config::{Problem, StrategySource};
use crate::output::{ellipse_points, write_atomic, write_json, Cell, Csv};
use crate::{CliError, Outcome};

/// Points per ellipse in `ellipses.csv`.
pub const ELLIPSE_SAMPLES: usize = 64;

fn optimizer_error(e: OptimizerError) -> CliError {
    match e {
        OptimizerError::InvalidConfig(m) => CliError::Input(format!("optimizer: {m}")),
        other => CliError::Numerical(other.to_string()),
    }
}

fn run_solver(p: &Problem) -> Result<SolveResult, CliError> {
    optimizer::solve(&p.world, &p.weights, &p.optimizer).map_err(optimizer_error)
}

fn not_converged(r: &SolveResult) -> Outcome {
    if r.converged {
        Outcome::Ok
    } else {
        Outcome::NotConverged(format!(
            "optimizer stopped after {} iterations with gradient norm {:e}",
            r.iterations, r.gradient_norm
        ))
    }
}

/// `{"value": …}` on success, `null` plus an `…_error` entry otherwise.
fn attempt<T: serde::Serialize, E: std::fmt::Display>(doc: &mut serde_json::Map<String, Value>, key: &str, r: Result<T, E>) {
    match r {
        Ok(v) => {
            doc.insert(key.into(), json!(v));
        }
        Err(e) => {
            doc.insert(key.into(), Value::Null);
            doc.insert(format!("{key}_error"), json!(e.to_string()));
        }
    }
}

fn regime_fields(p: &Problem, sigma: &frugal_core::Matrix, doc: &mut serde_json::Map<String, Value>) {
    match family::quadratic_form_data(&p.world, sigma) {
        Ok(q) => {
            doc.insert("regime".into(), json!(family::classify_regime(&q, family::default_regime_tol(&q))));
            doc.insert("xi_norm".into(), json!(q.xi_norm()));
        }
        Err(e) => {
            doc.insert("regime".into(), Value::Null);
            doc.insert("xi_norm".into(), Value::Null);
            doc.insert("regime_error".into(), json!(e.to_string()));
        }
    }
}

pub fn solve(p: &Problem, out: &Path) -> Result<Outcome, CliError> {
    let r = run_solver(p)?;
    let mut doc = serde_json::Map::new();
    doc.insert("schema".into(), json!("frugal-solution v1"));
    doc.insert("seed".into(), json!(p.seed));
    doc.insert("world".into(), json!(p.world));
    doc.insert("weights".into(), json!(p.weights));
    doc.insert("solution".into(), json!(r));
    regime_fields(p, &r.report.sigma, &mut doc);
    attempt(&mut doc, "profile", interpret::profile(&p.world, &r.strategy, &r.report.sigma));
    let baseline = optimizer::classical_lqg_baseline(&p.world, &p.weights);
    if let Ok(b) = &baseline {
        let gap = (r.report.total_loss - b.report.total_loss) / b.report.total_loss.abs();
        doc.insert("baseline_relative_gap".into(), json!(gap));
    }
    attempt(&mut doc, "baseline", baseline);
    write_json(&out.join("solution.json"), &doc)?;
    Ok(not_converged(&r))
}

pub fn sweep(p: &Problem, out: &Path) -> Result<Outcome, CliError> {
    let grid = p
        .config
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Input("sweep: section required by the sweep command".into()))?;
    let rows = optimizer::phase_sweep(&p.world, &p.weights, &grid.c_s, &grid.c_b, &p.optimizer);
    let mut table = Csv::new(
        "frugal-sweep v1",
        &[
            "c_s", "c_b", "regime", "xi_norm", "bits", "state_var", "gain_norm", "state_cost", "action_cost",
            "total_loss", "converged", "status",
        ],
    );
    for r in &rows {
        table.row(vec![
            r.c_s.into(),
            r.c_b.into(),
            r.regime.map_or("none".to_string(), |g| g.to_string()).into(),
            r.xi_norm.into(),
            r.bits.into(),
            r.state_var.into(),
            r.gain_norm.into(),
            r.state_cost.into(),
            r.action_cost.into(),
            r.total_loss.into(),
            r.converged.into(),
            r.status.clone().into(),
        ]);
    }
    let mut boundary = Csv::new("frugal-boundary v1", &["c_s", "last_lossless", "first_lossy", "single_step"]);
    for b in optimizer::phase_boundary(&rows) {
        let opt = |v: Option<f64>| v.map_or(Cell::from("none"), Cell::from);
        boundary.row(vec![b.c_s.into(), opt(b.last_lossless), opt(b.first_lossy), b.single_step.into()]);
    }
    table.write(&out.join("sweep.csv"))?;
    boundary.write(&out.join("boundary.csv"))?;
    let failed = rows.iter().filter(|r| !r.converged).count();
    Ok(if failed == 0 {
        Outcome::Ok
    } else {
        Outcome::NotConverged(format!("{failed} of {} sweep cells did not converge", rows.len()))
    })
}

#[derive(Deserialize)]
struct SeedFile {
    solution: SeedSolution,
}

#[derive(Deserialize)]
struct SeedSolution {
    strategy: Strategy,
    converged: bool,
}

/// The seed solution: read from a `solve` artifact when configured,
/// otherwise solved here.
fn family_seed(p: &Problem) -> Result<SolveResult, CliError> {
    let Some(rel) = &p.config.family.solution else {
        return run_solver(p);
    };
    let path = p.base_dir.join(rel);
    let field = |e: &dyn std::fmt::Display| CliError::Input(format!("family.solution ({}): {e}", path.display()));
    let text = std::fs::read_to_string(&path).map_err(|e| field(&e))?;
    let seed: SeedFile = serde_json::from_str(&text).map_err(|e| field(&e))?;
    let s = seed.solution.strategy;
    s.check_world(&p.world).map_err(|e| field(&e))?;
    let report = equilibrium::steady_state(&p.world, &p.weights, &s).map_err(|e| field(&e))?;
    Ok(SolveResult {
        strategy: s,
        report,
        converged: seed.solution.converged,
        gradient_norm: f64::NAN,
        hessian_min_eig: f64::NAN,
        iterations: 0,
        best_restart: 0,
        restart_losses: Vec::new(),
        boundary_optimum: false,
    })
}

fn enumerate(p: &Problem, seed: &SolveResult) -> Result<family::Family, CliError> {
    family::enumerate_family(&p.world, &p.weights, seed, p.config.family.samples, p.seed).map_err(|e| match e {
        FamilyError::SeedNotConverged => CliError::NotConverged("family seed solution did not converge".into()),
        other => CliError::Numerical(other.to_string()),
    })
}

fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

pub fn family(p: &Problem, out: &Path) -> Result<Outcome, CliError> {
    let seed = family_seed(p)?;
    let fam = enumerate(p, &seed)?;
    let seed_loss = &seed.report;
    let mut members = Vec::with_capacity(fam.members.len());
    let mut ellipses = Csv::new("frugal-ellipses v1", &["member", "map", "k", "x", "y"]);
    for (i, v) in fam.members.iter().enumerate() {
        let s = &v.member.strategy;
        let mut doc = serde_json::Map::new();
        doc.insert("index".into(), json!(i));
        doc.insert("Theta".into(), json!(frugal_core::matrixkit::to_rows(&v.member.theta)));
        doc.insert("strategy".into(), json!(s));
        doc.insert("report".into(), json!(v.report));
        doc.insert(
            "loss_rel_gap".into(),
            json!({
                "state_cost": rel_gap(v.report.state_cost, seed_loss.state_cost),
                "action_cost": rel_gap(v.report.action_cost, seed_loss.action_cost),
                "information_bits": rel_gap(v.report.information_bits, seed_loss.information_bits),
                "total_loss": rel_gap(v.report.total_loss, seed_loss.total_loss),
            }),
        );
        doc.insert("sigma_rel_error".into(), json!(v.sigma_rel_error));
        doc.insert("constraint_residual".into(), json!(v.constraint_residual));
        attempt(&mut doc, "profile", interpret::profile(&p.world, s, &v.report.sigma));
        members.push(Value::Object(doc));
        for (name, map) in [("Phi", &s.phi), ("Psi", &s.psi)] {
            for (k, (x, y)) in ellipse_points(map, ELLIPSE_SAMPLES).into_iter().flatten().enumerate() {
                ellipses.row(vec![i.into(), name.into(), k.into(), x.into(), y.into()]);
            }
        }
    }
    let doc = json!({
        "schema": "frugal-family v1",
        "seed": p.seed,
        "regime": fam.regime,
        "quadratic": fam.quadratic,
        "seed_strategy": seed.strategy,
        "seed_report": seed.report,
        "members": members,
        "rejected": fam.rejected,
    });
    write_json(&out.join("family.json"), &doc)?;
    ellipses.write(&out.join("ellipses.csv"))?;
    Ok(Outcome::Ok)
}

fn strategies(p: &Problem) -> Result<(Vec<(String, Strategy)>, Outcome), CliError> {
    let sim = &p.config.simulation;
    if let Some(list) = &sim.strategies {
        return Ok((list.iter().map(|s| (s.label.clone(), s.strategy.clone())).collect(), Outcome::Ok));
    }
    let seed = run_solver(p)?;
    let outcome = not_converged(&seed);
    match sim.source {
        StrategySource::Solution => Ok((vec![("solution".into(), seed.strategy)], outcome)),
        StrategySource::Family => {
            let fam = enumerate(p, &seed)?;
            let list = fam
                .members
                .into_iter()
                .enumerate()
                .map(|(i, v)| (format!("member_{i:02}"), v.member.strategy))
                .collect();
            Ok((list, outcome))
        }
    }
}

fn default_initial_state(p: &Problem) -> Vec<f64> {
    let mut x0 = vec![0.0; p.world.n()];
    match p.physics() {
        Some(Physics::Cartpole { .. }) => x0[2] = 0.1,
        Some(Physics::PlanarDrone { .. }) => x0[0] = 0.3,
        None => {}
    }
    x0
}

/// Pole within 0.2 rad, or drone within 0.3 m of its target position, at
/// every step of the final window.
fn success(plant: &NonlinearPlant, r: &Rollout, window: usize) -> bool {
    let tail = &r.states[r.len().saturating_sub(window)..];
    tail.iter().all(|s| match plant.physics {
        Physics::Cartpole { .. } => (s[2] - plant.target[2]).abs() < 0.2,
        Physics::PlanarDrone { .. } => (s[0] - plant.target[0]).hypot(s[1] - plant.target[1]) < 0.3,
    })
}

struct Trial {
    seed: u64,
    rollout: Option<Rollout>,
    diverged_step: Option<usize>,
    error: Option<String>,
}

fn run_trials(p: &Problem, s: &Strategy) -> Vec<Trial> {
    let sim = &p.config.simulation;
    let x0 = sim.initial_state.clone().unwrap_or_else(|| default_initial_state(p));
    (0..sim.trials)
        .into_par_iter()
        .map(|k| {
            let seed = p.seed.wrapping_add(k as u64);
            let r = match &p.plant {
                Some((plant, dt)) => simlab::rollout_nonlinear(plant, s, sim.steps, *dt, &x0, seed),
                None => simlab::rollout_linear(&p.world, s, sim.steps, seed),
            };
            match r {
                Ok(r) => Trial {
                    seed,
                    rollout: Some(r),
                    diverged_step: None,
                    error: None,
                },
                Err(SimError::Diverged { step, .. }) => Trial {
                    seed,
                    rollout: None,
                    diverged_step: Some(step),
                    error: None,
                },
                Err(e) => Trial {
                    seed,
                    rollout: None,
                    diverged_step: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect()
}

fn delta_se(e: &Estimate, analytic: f64) -> f64 {
    let d = e.mean - analytic;
    if d == 0.0 {
        0.0
    } else {
        d / e.se
    }
}

fn linear_check(p: &Problem, s: &Strategy, analytic: &EquilibriumReport) -> Result<Value, SimError> {
    let sim = &p.config.simulation;
    let c: CostSample = simlab::empirical_costs(
        &p.world,
        &p.weights,
        s,
        sim.linear_trials,
        sim.linear_steps,
        sim.burn_in,
        p.seed,
    )?;
    let deltas = [
        ("state_cost", delta_se(&c.state_cost, analytic.state_cost)),
        ("action_cost", delta_se(&c.action_cost, analytic.action_cost)),
        ("information_bits", delta_se(&c.information_bits, analytic.information_bits)),
        ("total", delta_se(&c.total, analytic.total_loss)),
    ];
    let within = deltas.iter().all(|(_, d)| d.abs() <= 3.0);
    let deltas: serde_json::Map<String, Value> = deltas.iter().map(|(k, d)| (k.to_string(), json!(d))).collect();
    Ok(json!({
        "costs": c,
        "delta_se": deltas,
        "within_3se": within,
    }))
}

fn check_labels(list: &[(String, Strategy)]) -> Result<(), CliError> {
    for (i, (label, _)) in list.iter().enumerate() {
        let ok = !label.is_empty() && label.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
        if !ok {
            return Err(CliError::Input(format!(
                "simulation.strategies[{i}].label: `{label}` must be non-empty ASCII letters, digits, `_` or `-`"
            )));
        }
        if list[..i].iter().any(|(l, _)| l == label) {
            return Err(CliError::Input(format!("simulation.strategies[{i}].label: duplicate `{label}`")));
        }
    }
    Ok(())
}

pub fn simulate(p: &Problem, out: &Path) -> Result<Outcome, CliError> {
    let sim = &p.config.simulation;
    let (list, outcome) = strategies(p)?;
    check_labels(&list)?;
    let window = p
        .plant
        .as_ref()
        .map(|(_, dt)| ((sim.success_window / dt).round() as usize).clamp(1, sim.steps.max(1)));
    let mut files = Vec::new();
    let mut docs = Vec::with_capacity(list.len());
    for (label, s) in &list {
        let mut doc = serde_json::Map::new();
        doc.insert("label".into(), json!(label));
        doc.insert("strategy".into(), json!(s));
        let analytic = equilibrium::steady_state(&p.world, &p.weights, s);
        match &analytic {
            Ok(rep) => attempt(&mut doc, "linear", linear_check(p, s, rep)),
            Err(e) => {
                doc.insert("linear".into(), Value::Null);
                doc.insert("linear_error".into(), json!(format!("no stationary equilibrium: {e}")));
            }
        }
        attempt(&mut doc, "analytic", analytic);

        let trials = run_trials(p, s);
        let mut rows = Vec::with_capacity(trials.len());
        for (k, t) in trials.iter().enumerate() {
            let ok = match (&t.rollout, &p.plant, window) {
                (Some(r), Some((plant, _)), Some(w)) => Some(success(plant, r, w)),
                (None, Some(_), _) => Some(false),
                _ => None,
            };
            let file = t.rollout.as_ref().map(|r| {
                let path = format!("rollouts/{label}/trial_{k:03}.csv");
                let mut bytes = Vec::new();
                r.write_csv(&mut bytes).expect("writing to memory");
                files.push((path.clone(), bytes));
                path
            });
            rows.push(json!({
                "trial": k,
                "seed": t.seed,
                "diverged": t.diverged_step.is_some(),
                "diverged_step": t.diverged_step,
                "error": t.error,
                "success": ok,
                "action_sign_changes": t.rollout.as_ref().map(|r| r.sign_changes(0)),
                "rollout": file,
            }));
        }
        let count = |f: &dyn Fn(&Value) -> bool| rows.iter().filter(|r| f(r)).count();
        let successes = count(&|r| r["success"] == json!(true));
        let diverged = count(&|r| r["diverged"] == json!(true));
        let sign_changes: Vec<f64> = trials
            .iter()
            .filter_map(|t| t.rollout.as_ref().map(|r| r.sign_changes(0) as f64))
            .collect();
        doc.insert(
            "rollouts".into(),
            json!({
                "kind": if p.plant.is_some() { "nonlinear" } else { "linear" },
                "trials": rows.len(),
                "steps": sim.steps,
                "diverged": diverged,
                "success_rate": p.plant.as_ref().map(|_| successes as f64 / rows.len().max(1) as f64),
                "mean_action_sign_changes": if sign_changes.is_empty() {
                    Value::Null
                } else {
                    json!(sign_changes.iter().sum::<f64>() / sign_changes.len() as f64)
                },
                "trial_results": rows,
            }),
        );

        if let (Some(spec), Some((plant, dt))) = (&sim.sensitivity, &p.plant) {
            let names: Vec<&str> = match &spec.parameters {
                Some(v) => v.iter().map(String::as_str).collect(),
                None => plant.physics.parameter_names().to_vec(),
            };
            attempt(
                &mut doc,
                "sensitivity",
                simlab::sensitivity(plant, &p.weights, s, &names, spec.rel_step, *dt),
            );
        }
        docs.push(Value::Object(doc));
    }
    let doc = json!({
        "schema": "frugal-simulate v1",
        "seed": p.seed,
        "plant": p.physics().map(Physics::name),
        "initial_state": sim.initial_state.clone().unwrap_or_else(|| default_initial_state(p)),
        "strategies": docs,
    });
    for (path, bytes) in &files {
        write_atomic(&out.join(path), bytes)?;
    }
    write_json(&out.join("simulate.json"), &doc)?;
    Ok(outcome)
}
