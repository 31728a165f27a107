//! Frugal control of linear–Gaussian systems.
//!
//! Inference and control are optimized jointly at equilibrium under an
//! explicit price per bit of information the controller extracts from its
//! observations. The crate computes such strategies, recovers the whole family
//! of equally good solutions, reads each one back as the exact Bayesian filter
//! of a distorted world model, and runs them on linear and nonlinear plants.

// Negated comparisons are used on purpose so that NaN fails every check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod equilibrium;
pub mod family;
pub mod interpret;
pub mod matrixkit;
pub mod model;
pub mod optimizer;
pub mod simlab;

pub use equilibrium::{AugmentedSystem, EquilibriumError, EquilibriumReport, Gradient};
pub use interpret::{InterpretError, Interpretation, StrategyProfile};
pub use family::{Family, FamilyError, FamilyMember, QuadraticFormData, Regime};
pub use matrixkit::{Matrix, MatrixError, Vector};
pub use model::{CostWeights, FilterForm, ModelError, Strategy, SubjectiveModel, WorldModel};
pub use optimizer::{OptimizerConfig, OptimizerError, SolveResult};
pub use simlab::{NonlinearPlant, Rollout, SimError};
