//! Most probable transition paths for small SDE systems: drift models,
//! Euler-Lagrange residuals and actions, PINN and bridge solvers, inverse
//! parameter recovery and a collocation reference solver.

pub mod action;
pub mod bridge;
pub mod collocation;
pub mod error;
pub mod inverse;
pub mod model;
pub mod nn;
pub mod pinn;
pub mod scalar;

pub use action::{el_residual, fw_action, fw_energy, fw_energy_profile, om_action, path_velocity, ElResidualSpec};
pub use error::{Error, Result};
pub use model::{
    find_equilibria, BoundaryConditions, DriftEval, DriftKind, DriftModel, Equilibrium, Framework, NoiseSpec,
    PathSample,
};
pub use collocation::{solve_el_collocation, CollocationProblem, CollocationSolution};
