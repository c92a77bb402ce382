//! Offloading programs, baselines, plan validation and energy accounting.

mod build;
mod plan;

use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

pub use build::{
    build_complete_offloading, build_partial_offloading, build_program, build_program_unchecked, precheck,
    Formulation, OffloadTarget, OffloadingProgram, VehicleLayout,
};
pub use plan::{
    validate_plan, AllocationPlan, ConstraintFamily, ConstraintReport, FamilyCheck, Offender, PLAN_TOLERANCE_BITS,
};

use crate::energy::{
    computation_energy, local_execution_energy, transmission_energy, ComputeParams, EnergyError, Processor,
    RadioParams,
};
use crate::scenario::Scenario;
use crate::solver::{self, KktResiduals, SolveOptions, SolverError, Status};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizerError {
    #[error("vehicle {vehicle}: {family} needs {required} bits but at most {available} fit in its window")]
    Precheck { vehicle: usize, family: ConstraintFamily, required: f64, available: f64 },
    #[error("equal-bit baseline infeasible: vehicle {vehicle} needs {required} bits per frame, {family} allows {cap}")]
    InfeasibleBaseline { vehicle: usize, family: ConstraintFamily, required: f64, cap: f64 },
    #[error("offloading ratio {0} is outside [0, 1]")]
    InvalidRatio(f64),
    #[error("nothing is offloaded; there is no program to solve")]
    NothingOffloaded,
    #[error("plan is {vehicles}×{frames}, scenario needs {expected_vehicles}×{expected_frames}")]
    DimensionMismatch { expected_vehicles: usize, expected_frames: usize, vehicles: usize, frames: usize },
    #[error("solver stopped with status {status} (largest KKT residual {residual:e})")]
    NotConverged { status: Status, residual: f64 },
    #[error("solver output fails {families:?} (largest violation {violation:e} bits)")]
    InvalidPlan { families: Vec<ConstraintFamily>, violation: f64 },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
}

impl OptimizerError {
    /// True for errors that certify that no feasible schedule exists.
    pub fn is_infeasible(&self) -> bool {
        matches!(
            self,
            OptimizerError::Precheck { .. }
                | OptimizerError::InfeasibleBaseline { .. }
                | OptimizerError::Solver(SolverError::Infeasible { .. })
        )
    }
}

/// Energy breakdown of a plan, in joules.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyReport {
    /// Uplink transmission energy per vehicle.
    pub uplink: Vec<f64>,
    /// On-board execution energy of the non-offloaded share per vehicle.
    pub local: Vec<f64>,
    /// `Σ uplink + Σ local`, the quantity the programs minimize.
    pub total: f64,
    /// RSU processing energy; reported only.
    pub rsu_compute: f64,
    /// RSU downlink transmission energy; reported only.
    pub rsu_downlink: f64,
}

/// Evaluates every energy term of `plan` directly from the energy models.
pub fn total_vehicle_energy(plan: &AllocationPlan, scenario: &Scenario) -> Result<EnergyReport, OptimizerError> {
    plan.check_dimensions(scenario)?;
    let cfg = &scenario.config;
    let radio = RadioParams::from_config(cfg);
    let mut uplink = Vec::with_capacity(scenario.vehicles());
    let mut local = Vec::with_capacity(scenario.vehicles());
    let mut rsu_compute = 0.0;
    let mut rsu_downlink = 0.0;
    for (k, task) in scenario.tasks.iter().enumerate() {
        let rsu = ComputeParams::new(cfg.rsu_capacitance, task.cycles_per_bit, Processor::Rsu)?;
        let mut up = 0.0;
        for nu in 1..=scenario.frames() {
            let gain = scenario.gain(k, nu);
            up += transmission_energy(plan.uplink[k][nu - 1], gain, &radio)?;
            rsu_downlink += transmission_energy(plan.downlink[k][nu - 1], gain, &radio)?;
            rsu_compute += computation_energy(plan.compute[k][nu - 1], cfg.rsu_frequency, &rsu)?;
        }
        uplink.push(up);
        let kept = ((1.0 - plan.rho[k]) * task.input_bits).max(0.0);
        local.push(local_execution_energy(kept, task.cycles_per_bit, task.capacitance, cfg.deadline)?);
    }
    let total = uplink.iter().sum::<f64>() + local.iter().sum::<f64>();
    Ok(EnergyReport { uplink, local, total, rsu_compute, rsu_downlink })
}

/// Everything computed on board: no offloading at all.
pub fn local_baseline(scenario: &Scenario) -> Result<EnergyReport, OptimizerError> {
    total_vehicle_energy(&local_plan(scenario), scenario)
}

fn local_plan(scenario: &Scenario) -> AllocationPlan {
    AllocationPlan::zeros(scenario.vehicles(), scenario.frames())
}

/// Same number of bits in every usable frame: `L/(N−2)` up and computed,
/// `κL/(N−2)` down, with everything offloaded.
pub fn equal_bit_allocation(scenario: &Scenario) -> Result<AllocationPlan, OptimizerError> {
    let cfg = &scenario.config;
    let n = scenario.frames();
    let stages = (n - 2) as f64;
    let mut plan = AllocationPlan::zeros(scenario.vehicles(), n);
    for (k, task) in scenario.tasks.iter().enumerate() {
        let per_frame = task.input_bits / stages;
        let out = task.output_ratio * per_frame;
        if per_frame > cfg.uplink_cap {
            return Err(OptimizerError::InfeasibleBaseline {
                vehicle: k,
                family: ConstraintFamily::UplinkCap,
                required: per_frame,
                cap: cfg.uplink_cap,
            });
        }
        if out > cfg.downlink_cap {
            return Err(OptimizerError::InfeasibleBaseline {
                vehicle: k,
                family: ConstraintFamily::DownlinkCap,
                required: out,
                cap: cfg.downlink_cap,
            });
        }
        for i in 0..n - 2 {
            plan.uplink[k][i] = per_frame;
            plan.compute[k][i + 1] = per_frame;
            plan.downlink[k][i + 2] = out;
        }
        plan.rho[k] = 1.0;
    }
    Ok(plan)
}

/// The four schemes compared by the benchmarks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Local,
    Equal,
    Complete,
    Partial,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Local, Strategy::Equal, Strategy::Complete, Strategy::Partial];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Local => "local",
            Strategy::Equal => "equal",
            Strategy::Complete => "complete",
            Strategy::Partial => "partial",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown strategy `{s}` (expected local, equal, complete or partial)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OptimizeOptions {
    pub formulation: Formulation,
    pub solve: SolveOptions,
}

/// Solver statistics attached to an optimized plan.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverSummary {
    pub status: Status,
    pub newton_steps: usize,
    pub outer_iterations: usize,
    /// Program objective plus any constant local energy, in joules.
    pub objective: f64,
    pub residuals: KktResiduals,
}

/// A plan together with its energy and constraint checks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Outcome {
    pub strategy: Strategy,
    pub plan: AllocationPlan,
    pub energy: EnergyReport,
    pub constraints: ConstraintReport,
    pub solver: Option<SolverSummary>,
}

/// Builds, solves and checks one offloading program.
pub fn solve_offloading(
    scenario: &Scenario,
    target: OffloadTarget,
    options: &OptimizeOptions,
) -> Result<(AllocationPlan, SolverSummary), OptimizerError> {
    let built = build_program(scenario, target, options.formulation)?;
    let sol = solver::solve(&built.program, &options.solve)?;
    if sol.status != Status::Optimal {
        return Err(OptimizerError::NotConverged { status: sol.status, residual: sol.residuals.max() });
    }
    let plan = built.to_plan(scenario, &sol.x);
    let summary = SolverSummary {
        status: sol.status,
        newton_steps: sol.iterations,
        outer_iterations: sol.outer.len(),
        objective: sol.objective + built.constant_energy,
        residuals: sol.residuals,
    };
    Ok((plan, summary))
}

/// Runs one strategy end to end. Optimized plans must pass
/// [`validate_plan`]; the baselines are returned with their report as is.
pub fn optimize(scenario: &Scenario, strategy: Strategy, options: &OptimizeOptions) -> Result<Outcome, OptimizerError> {
    let (plan, solver) = match strategy {
        Strategy::Local => (local_plan(scenario), None),
        Strategy::Equal => (equal_bit_allocation(scenario)?, None),
        Strategy::Complete => {
            let (plan, s) = solve_offloading(scenario, OffloadTarget::Complete, options)?;
            (plan, Some(s))
        }
        Strategy::Partial => {
            let (plan, s) = solve_offloading(scenario, OffloadTarget::Partial, options)?;
            (plan, Some(s))
        }
    };
    let constraints = validate_plan(&plan, scenario)?;
    if solver.is_some() && !constraints.passes() {
        return Err(OptimizerError::InvalidPlan {
            families: constraints.failing(),
            violation: constraints.max_violation(),
        });
    }
    let energy = total_vehicle_energy(&plan, scenario)?;
    Ok(Outcome { strategy, plan, energy, constraints, solver })
}

/// Total energy when every vehicle offloads the share `rho` with an optimal
/// bit schedule and runs the rest on board.
pub fn fixed_rho_energy(scenario: &Scenario, rho: f64, options: &OptimizeOptions) -> Result<f64, OptimizerError> {
    fixed_rho_outcome(scenario, rho, options).map(|(_, e)| e.total)
}

/// Plan and energy behind [`fixed_rho_energy`].
pub fn fixed_rho_outcome(
    scenario: &Scenario,
    rho: f64,
    options: &OptimizeOptions,
) -> Result<(AllocationPlan, EnergyReport), OptimizerError> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(OptimizerError::InvalidRatio(rho));
    }
    let plan = if rho == 0.0 {
        local_plan(scenario)
    } else {
        let (plan, _) = solve_offloading(scenario, OffloadTarget::Fixed(rho), options)?;
        let report = validate_plan(&plan, scenario)?;
        if !report.passes() {
            return Err(OptimizerError::InvalidPlan { families: report.failing(), violation: report.max_violation() });
        }
        plan
    };
    let energy = total_vehicle_energy(&plan, scenario)?;
    Ok((plan, energy))
}
