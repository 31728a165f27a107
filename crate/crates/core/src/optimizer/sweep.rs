use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{solve, OptimizerConfig};
use crate::equilibrium;
use crate::family::{self, Regime};
use crate::matrixkit::Matrix;
use crate::model::{self, CostWeights, Strategy, WorldModel};

/// Axes of a scalar `(Φ, Ψ)` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
}

impl Grid {
    pub fn linspace(phi: (f64, f64), psi: (f64, f64), points: usize) -> Self {
        let axis = |(lo, hi): (f64, f64)| {
            (0..points)
                .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
                .collect()
        };
        Self {
            phi: axis(phi),
            psi: axis(psi),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Landscape {
    pub grid: Grid,
    /// `loss[i][j]` at `(phi[i], psi[j])`; infinite where unstable.
    pub loss: Vec<Vec<f64>>,
}

impl Landscape {
    /// Interior grid points strictly below all eight neighbours.
    pub fn local_minima(&self) -> Vec<(usize, usize, f64)> {
        let rows = self.loss.len();
        let cols = self.loss.first().map_or(0, Vec::len);
        let mut out = Vec::new();
        for i in 1..rows.saturating_sub(1) {
            for j in 1..cols.saturating_sub(1) {
                let v = self.loss[i][j];
                if !v.is_finite() {
                    continue;
                }
                let is_min = (i - 1..=i + 1)
                    .flat_map(|a| (j - 1..=j + 1).map(move |b| (a, b)))
                    .filter(|&(a, b)| (a, b) != (i, j))
                    .all(|(a, b)| v < self.loss[a][b]);
                if is_min {
                    out.push((i, j, v));
                }
            }
        }
        out
    }
}

/// Total loss over a grid of scalar strategies.
pub fn landscape(world: &WorldModel, weights: &CostWeights, grid: &Grid) -> Landscape {
    let loss = grid
        .phi
        .par_iter()
        .map(|&phi| {
            grid.psi
                .iter()
                .map(|&psi| {
                    let s = Strategy {
                        phi: Matrix::from_element(1, 1, phi),
                        psi: Matrix::from_element(1, 1, psi),
                    };
                    equilibrium::steady_state(world, weights, &s).map_or(f64::INFINITY, |r| r.total_loss)
                })
                .collect()
        })
        .collect();
    Landscape {
        grid: grid.clone(),
        loss,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRow {
    pub c_s: f64,
    pub c_b: f64,
    pub regime: Option<Regime>,
    pub xi_norm: f64,
    /// `‖L‖_F` of the recovered filter gain.
    pub gain_norm: f64,
    /// `Tr Σ_s`.
    pub state_var: f64,
    pub bits: f64,
    pub state_cost: f64,
    pub action_cost: f64,
    pub total_loss: f64,
    pub converged: bool,
    /// `ok`, or the error that stopped this cell.
    pub status: String,
}

fn failed_row(c_s: f64, c_b: f64, status: String) -> PhaseRow {
    PhaseRow {
        c_s,
        c_b,
        regime: None,
        xi_norm: f64::NAN,
        gain_norm: f64::NAN,
        state_var: f64::NAN,
        bits: f64::NAN,
        state_cost: f64::NAN,
        action_cost: f64::NAN,
        total_loss: f64::NAN,
        converged: false,
        status,
    }
}

fn sweep_cell(world: &WorldModel, base: &CostWeights, c_s: f64, c_b: f64, cfg: &OptimizerConfig) -> PhaseRow {
    let n = world.n();
    let weights = CostWeights {
        c_s: Matrix::identity(n, n) * c_s,
        c_a: base.c_a.clone(),
        c_b,
    };
    let r = match solve(world, &weights, cfg) {
        Ok(r) => r,
        Err(e) => return failed_row(c_s, c_b, e.to_string()),
    };
    let rep = &r.report;
    let mut row = PhaseRow {
        c_s,
        c_b,
        regime: None,
        xi_norm: f64::NAN,
        gain_norm: f64::NAN,
        state_var: rep.sigma_s().trace(),
        bits: rep.information_bits,
        state_cost: rep.state_cost,
        action_cost: rep.action_cost,
        total_loss: rep.total_loss,
        converged: r.converged,
        status: if r.converged { "ok".into() } else { "not_converged".into() },
    };
    match model::filter_from_strategy(&r.strategy, &rep.sigma) {
        Ok(f) => row.gain_norm = f.gain.norm(),
        Err(e) => row.status = e.to_string(),
    }
    match family::quadratic_form_data(world, &rep.sigma) {
        Ok(q) => {
            row.xi_norm = q.xi_norm();
            row.regime = Some(family::classify_regime(&q, family::default_regime_tol(&q)));
        }
        Err(e) => row.status = e.to_string(),
    }
    row
}

/// Solves every `(C_s, C_b)` cell with `C_s·I` state weights and the base
/// action weights. Rows are ordered by `C_s`, then `C_b`. Failures are kept
/// as rows with a status message.
pub fn phase_sweep(
    world: &WorldModel,
    base: &CostWeights,
    c_s_grid: &[f64],
    c_b_grid: &[f64],
    cfg: &OptimizerConfig,
) -> Vec<PhaseRow> {
    let cells: Vec<(f64, f64)> = c_s_grid
        .iter()
        .flat_map(|&s| c_b_grid.iter().map(move |&b| (s, b)))
        .collect();
    cells
        .par_iter()
        .map(|&(s, b)| sweep_cell(world, base, s, b, cfg))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub c_s: f64,
    /// Largest lossless `C_b` below the first lossy one.
    pub last_lossless: Option<f64>,
    /// Smallest lossy `C_b`.
    pub first_lossy: Option<f64>,
    /// The regime sequence along `C_b` is lossless…lossless lossy…lossy.
    pub single_step: bool,
}

/// Lossless/lossy threshold for each `C_s` row of a sweep.
pub fn phase_boundary(rows: &[PhaseRow]) -> Vec<BoundaryPoint> {
    let mut c_s_values: Vec<f64> = rows.iter().map(|r| r.c_s).collect();
    c_s_values.sort_by(f64::total_cmp);
    c_s_values.dedup();
    c_s_values
        .into_iter()
        .map(|c_s| {
            let mut line: Vec<&PhaseRow> = rows.iter().filter(|r| r.c_s == c_s).collect();
            line.sort_by(|a, b| a.c_b.total_cmp(&b.c_b));
            let first_lossy = line.iter().position(|r| r.regime == Some(Regime::Lossy));
            let single_step = line.iter().all(|r| r.regime.is_some())
                && match first_lossy {
                    Some(k) => {
                        line[..k].iter().all(|r| r.regime == Some(Regime::Lossless))
                            && line[k..].iter().all(|r| r.regime == Some(Regime::Lossy))
                    }
                    None => true,
                };
            BoundaryPoint {
                c_s,
                last_lossless: match first_lossy {
                    Some(0) => None,
                    Some(k) => Some(line[k - 1].c_b),
                    None => line.last().map(|r| r.c_b),
                },
                first_lossy: first_lossy.map(|k| line[k].c_b),
                single_step,
            }
        })
        .collect()
}
