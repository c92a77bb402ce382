//! Experiment harness: config loading, the simulate run, deadline and
//! offloading-ratio sweeps, and their CSV/JSON artifacts.

mod config;
mod output;
mod run;
mod units;

use std::path::PathBuf;

use thiserror::Error;

pub use config::{check_deadline, draw_input_sizes, load_config, parse_config, ConfigError, LoadedConfig, DEFAULT_SEED};
pub use output::{read_plan, RunManifest, TOOL_VERSION};
pub use run::{
    default_deadline_grid, default_rho_grid, run_simulate, run_sweep_deadline, run_sweep_rho, validate_outputs,
    Cell, DeadlineRow, DeadlineSweep, EndpointCheck, RhoRow, RhoSweep, RunOptions, SimulateReport,
};
pub use units::{parse_quantity, Dimension, UnitError};

use crate::optimizer::{ConstraintFamily, OptimizerError, Strategy};

/// Process exit codes of the command-line tool.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const INFEASIBLE: i32 = 3;
    pub const NOT_CONVERGED: i32 = 4;
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{strategy}: {source}")]
    Optimizer { strategy: Strategy, source: OptimizerError },
    #[error("{strategy} plan violates {families:?} (largest violation {violation:e} bits); nothing written")]
    InvalidPlan { strategy: Strategy, families: Vec<ConstraintFamily>, violation: f64 },
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("endpoint check failed: ρ = {rho} gives {value} J, reference {reference} J")]
    Endpoint { rho: f64, value: f64, reference: f64 },
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed {path}: {reason}")]
    Artifact { path: PathBuf, reason: String },
    #[error("worker pool: {0}")]
    Pool(String),
}

impl BenchError {
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) | BenchError::Grid(_) => exit::CONFIG,
            BenchError::Optimizer { source: OptimizerError::NotConverged { .. }, .. } => exit::NOT_CONVERGED,
            BenchError::Optimizer { source, .. } if source.is_infeasible() => exit::INFEASIBLE,
            BenchError::InvalidPlan { .. } => exit::INFEASIBLE,
            _ => exit::FAILURE,
        }
    }
}
