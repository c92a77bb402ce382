//! The simulate run and the deadline / offloading-ratio sweeps.

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use super::config::{check_deadline, LoadedConfig};
use super::output::{
    allocation_rows, csv_bytes, energy_rows, ensure_dir, read_plan, write_atomic, write_manifest, RunManifest,
    ALLOCATION_HEADER, ENERGY_HEADER, TOOL_VERSION,
};
use super::BenchError;
use crate::optimizer::{
    fixed_rho_outcome, local_baseline, optimize, validate_plan, ConstraintFamily, ConstraintReport, OptimizeOptions, OptimizerError,
    Outcome, Strategy,
};
use crate::scenario::Scenario;

/// Relative tolerance of the ρ = 0 and ρ = 1 endpoint identities.
pub const ENDPOINT_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub optimize: OptimizeOptions,
    /// Worker threads for sweep cells.
    pub workers: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { optimize: OptimizeOptions::default(), workers: 1 }
    }
}

/// Deadlines of the deadline sweep, seconds.
pub fn default_deadline_grid() -> Vec<f64> {
    vec![12.0, 14.0, 16.0, 18.0, 20.0]
}

/// `0, 0.05, …, 1`.
pub fn default_rho_grid() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

#[derive(Debug, Clone)]
pub struct SimulateReport {
    pub outcome: Outcome,
    pub summary: String,
}

/// Runs one strategy and writes `allocation.csv`, `energy.csv`,
/// `summary.txt` and `manifest.json` to `out`. Plans that fail
/// [`validate_plan`] are refused and nothing is written.
pub fn run_simulate(
    loaded: &LoadedConfig,
    strategy: Strategy,
    options: &RunOptions,
    out: &Path,
) -> Result<SimulateReport, BenchError> {
    let scenario = &loaded.scenario;
    let outcome =
        optimize(scenario, strategy, &options.optimize).map_err(|source| BenchError::Optimizer { strategy, source })?;
    if !outcome.constraints.passes() {
        return Err(BenchError::InvalidPlan {
            strategy,
            families: outcome.constraints.failing(),
            violation: outcome.constraints.max_violation(),
        });
    }

    ensure_dir(out)?;
    let allocation = csv_bytes(&ALLOCATION_HEADER, &allocation_rows(&outcome.plan, scenario));
    write_atomic(&out.join("allocation.csv"), &allocation)?;
    let energy = csv_bytes(&ENERGY_HEADER, &energy_rows(&outcome.plan, &outcome.energy));
    write_atomic(&out.join("energy.csv"), &energy)?;
    let summary = simulate_summary(loaded, &outcome);
    write_atomic(&out.join("summary.txt"), summary.as_bytes())?;
    write_manifest(out, &manifest(loaded, "simulate", vec![strategy], vec![], vec![], options, out))?;
    Ok(SimulateReport { outcome, summary })
}

fn simulate_summary(loaded: &LoadedConfig, outcome: &Outcome) -> String {
    let s = &loaded.scenario;
    let mut text = String::new();
    let _ = writeln!(text, "strategy: {}", outcome.strategy);
    let _ = writeln!(text, "vehicles: {}  frames per window: {}  RSUs: {}", s.vehicles(), s.frames(), s.config.rsu_count);
    let _ = writeln!(text, "seed: {}  config digest: {}", loaded.seed, loaded.digest);
    let e = &outcome.energy;
    let _ = writeln!(text, "total vehicle energy: {} J", e.total);
    let _ = writeln!(text, "  uplink transmission: {} J", e.uplink.iter().sum::<f64>());
    let _ = writeln!(text, "  local computation: {} J", e.local.iter().sum::<f64>());
    let _ = writeln!(text, "RSU computation (reported only): {} J", e.rsu_compute);
    let _ = writeln!(text, "RSU downlink (reported only): {} J", e.rsu_downlink);
    match &outcome.solver {
        Some(sv) => {
            let _ = writeln!(text, "solver status: {}", sv.status);
            let _ = writeln!(text, "  newton steps: {}  barrier rounds: {}", sv.newton_steps, sv.outer_iterations);
            let r = &sv.residuals;
            let _ = writeln!(
                text,
                "  KKT residuals: stationarity {:e}, equality {:e}, inequality {:e}, dual {:e}, complementarity {:e}, gap {:e}",
                r.stationarity, r.primal_equality, r.primal_inequality, r.dual_feasibility, r.complementarity, r.duality_gap
            );
        }
        None => {
            let _ = writeln!(text, "solver status: not used (baseline)");
        }
    }
    let _ = writeln!(
        text,
        "constraint check: {} (largest violation {:e} bits)",
        if outcome.constraints.passes() { "pass" } else { "FAIL" },
        outcome.constraints.max_violation()
    );
    for (k, rho) in outcome.plan.rho.iter().enumerate() {
        let _ = writeln!(text, "  vehicle {k}: rho {rho}, uplink {} J, local {} J", e.uplink[k], e.local[k]);
    }
    text
}

fn manifest(
    loaded: &LoadedConfig,
    command: &str,
    strategies: Vec<Strategy>,
    deadline_grid: Vec<f64>,
    rho_grid: Vec<f64>,
    options: &RunOptions,
    out: &Path,
) -> RunManifest {
    RunManifest {
        tool_version: TOOL_VERSION.to_string(),
        command: command.to_string(),
        config_digest: loaded.digest.clone(),
        seed: loaded.seed,
        strategies: strategies.iter().map(|s| s.name().to_string()).collect(),
        deadline_grid,
        rho_grid,
        formulation: format!("{:?}", options.optimize.formulation).to_lowercase(),
        tolerance: options.optimize.solve.tolerance,
        output_dir: out.display().to_string(),
    }
}

/// Result of one sweep cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    /// Total vehicle energy, joules.
    Energy(f64),
    Infeasible,
    NotConverged,
    Failed(String),
}

impl Cell {
    pub fn energy(&self) -> Option<f64> {
        match self {
            Cell::Energy(e) => Some(*e),
            _ => None,
        }
    }

    fn from_error(e: &OptimizerError) -> Cell {
        if e.is_infeasible() {
            Cell::Infeasible
        } else if matches!(e, OptimizerError::NotConverged { .. }) {
            Cell::NotConverged
        } else {
            Cell::Failed(e.to_string())
        }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Energy(e) => write!(f, "{e}"),
            Cell::Infeasible => f.write_str("infeasible"),
            Cell::NotConverged => f.write_str("not-converged"),
            Cell::Failed(_) => f.write_str("failed"),
        }
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, BenchError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| BenchError::Pool(e.to_string()))
}

/// Energy of one strategy plus the equal-bit baseline's shared-cap excess.
///
/// The equal-bit baseline ignores other vehicles by construction, so its
/// energy is reported whenever every per-vehicle constraint holds; how far
/// it overloads shared RSUs is returned alongside.
fn strategy_cell(scenario: &Scenario, strategy: Strategy, options: &OptimizeOptions) -> (Cell, f64) {
    match optimize(scenario, strategy, options) {
        Ok(o) if o.constraints.passes() => (Cell::Energy(o.energy.total), 0.0),
        Ok(o) if strategy == Strategy::Equal && o.constraints.passes_except(ConstraintFamily::RsuUplinkCap) => {
            (Cell::Energy(o.energy.total), o.constraints.check(ConstraintFamily::RsuUplinkCap).max_violation)
        }
        Ok(_) => (Cell::Infeasible, 0.0),
        Err(e) => (Cell::from_error(&e), 0.0),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeadlineRow {
    pub deadline: f64,
    /// One cell per strategy, in [`Strategy::ALL`] order.
    pub cells: Vec<Cell>,
    /// Largest per-frame excess of the equal-bit baseline over the shared
    /// RSU uplink cap, bits; 0 when it fits.
    pub equal_rsu_excess: f64,
}

impl DeadlineRow {
    pub fn cell(&self, strategy: Strategy) -> &Cell {
        &self.cells[Strategy::ALL.iter().position(|&s| s == strategy).expect("known strategy")]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeadlineSweep {
    pub rows: Vec<DeadlineRow>,
}

/// Total energy of every strategy for every deadline in `grid`; writes
/// `deadline_sweep.csv` and `manifest.json`. Infeasible cells are recorded
/// and the sweep continues.
pub fn run_sweep_deadline(
    loaded: &LoadedConfig,
    grid: &[f64],
    options: &RunOptions,
    out: &Path,
) -> Result<DeadlineSweep, BenchError> {
    if grid.is_empty() {
        return Err(BenchError::Grid("deadline grid is empty".into()));
    }
    let mut scenarios = Vec::with_capacity(grid.len());
    for &t in grid {
        check_deadline(loaded.config(), t)?;
        let s = loaded
            .scenario
            .with_deadline(t)
            .map_err(|e| BenchError::Grid(format!("deadline {t} s: {e}")))?;
        scenarios.push(s);
    }

    let cells: Vec<(usize, Strategy)> =
        (0..grid.len()).flat_map(|i| Strategy::ALL.into_iter().map(move |s| (i, s))).collect();
    let results: Vec<(Cell, f64)> = pool(options.workers)?.install(|| {
        cells
            .par_iter()
            .map(|&(i, strategy)| {
                let (cell, excess) = strategy_cell(&scenarios[i], strategy, &options.optimize);
                log::info!("deadline {} s, {strategy}: {cell}", grid[i]);
                if excess > 0.0 {
                    log::warn!("deadline {} s: equal-bit baseline exceeds the shared RSU cap by {excess} bits", grid[i]);
                }
                (cell, excess)
            })
            .collect()
    });

    let rows: Vec<DeadlineRow> = grid
        .iter()
        .zip(results.chunks(Strategy::ALL.len()))
        .map(|(&deadline, cells)| DeadlineRow {
            deadline,
            cells: cells.iter().map(|(c, _)| c.clone()).collect(),
            equal_rsu_excess: cells.iter().map(|(_, x)| *x).fold(0.0, f64::max),
        })
        .collect();

    ensure_dir(out)?;
    let header = ["deadline_s", "local_J", "equal_J", "complete_J", "partial_J", "equal_rsu_cap_excess_bits"];
    let records: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            std::iter::once(r.deadline.to_string())
                .chain(r.cells.iter().map(Cell::to_string))
                .chain(std::iter::once(r.equal_rsu_excess.to_string()))
                .collect()
        })
        .collect();
    write_atomic(&out.join("deadline_sweep.csv"), &csv_bytes(&header, &records))?;
    write_manifest(out, &manifest(loaded, "sweep-deadline", Strategy::ALL.to_vec(), grid.to_vec(), vec![], options, out))?;
    Ok(DeadlineSweep { rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RhoRow {
    pub rho: f64,
    pub total: Cell,
    /// Uplink and local components of the total, when feasible.
    pub uplink: Option<f64>,
    pub local: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EndpointCheck {
    pub rho: f64,
    pub value: f64,
    /// Local baseline for ρ = 0, complete-offloading optimum for ρ = 1.
    pub reference: f64,
    pub relative_error: f64,
}

impl EndpointCheck {
    pub fn passes(&self) -> bool {
        self.relative_error <= ENDPOINT_TOLERANCE
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RhoSweep {
    pub rows: Vec<RhoRow>,
    pub endpoints: Vec<EndpointCheck>,
}

impl RhoSweep {
    /// Grid point with the lowest feasible total energy.
    pub fn argmin(&self) -> Option<(f64, f64)> {
        self.rows
            .iter()
            .filter_map(|r| r.total.energy().map(|e| (r.rho, e)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }
}

/// Total energy when every vehicle offloads the same share ρ, for every ρ in
/// `grid`; writes `rho_sweep.csv` and `manifest.json`. The ρ = 0 and ρ = 1
/// rows are checked against the local baseline and the complete-offloading
/// optimum; a mismatch is an error after the files are written.
pub fn run_sweep_rho(
    loaded: &LoadedConfig,
    grid: &[f64],
    options: &RunOptions,
    out: &Path,
) -> Result<RhoSweep, BenchError> {
    if grid.is_empty() {
        return Err(BenchError::Grid("ρ grid is empty".into()));
    }
    if let Some(bad) = grid.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(BenchError::Grid(format!("ρ = {bad} is outside [0, 1]")));
    }
    let scenario = &loaded.scenario;
    let rows: Vec<RhoRow> = pool(options.workers)?.install(|| {
        grid.par_iter()
            .map(|&rho| {
                let row = match fixed_rho_outcome(scenario, rho, &options.optimize) {
                    Ok((_, e)) => RhoRow {
                        rho,
                        total: Cell::Energy(e.total),
                        uplink: Some(e.uplink.iter().sum()),
                        local: Some(e.local.iter().sum()),
                    },
                    Err(e) => RhoRow { rho, total: Cell::from_error(&e), uplink: None, local: None },
                };
                log::info!("rho {rho}: {}", row.total);
                row
            })
            .collect()
    });

    let mut endpoints = Vec::new();
    for row in &rows {
        let reference = if row.rho == 0.0 {
            local_baseline(scenario).map(|e| e.total)
        } else if row.rho == 1.0 {
            optimize(scenario, Strategy::Complete, &options.optimize).map(|o| o.energy.total)
        } else {
            continue;
        };
        if let (Some(value), Ok(reference)) = (row.total.energy(), reference) {
            let relative_error = ((value - reference) / reference).abs();
            endpoints.push(EndpointCheck { rho: row.rho, value, reference, relative_error });
        }
    }
    let sweep = RhoSweep { rows, endpoints };
    if let Some((rho, e)) = sweep.argmin() {
        log::info!("lowest energy on the grid: {e} J at rho = {rho}");
    }

    ensure_dir(out)?;
    let header = ["rho", "total_J", "uplink_J", "local_J"];
    let opt = |v: Option<f64>| v.map_or_else(String::new, |v| v.to_string());
    let records: Vec<Vec<String>> = sweep
        .rows
        .iter()
        .map(|r| vec![r.rho.to_string(), r.total.to_string(), opt(r.uplink), opt(r.local)])
        .collect();
    write_atomic(&out.join("rho_sweep.csv"), &csv_bytes(&header, &records))?;
    write_manifest(out, &manifest(loaded, "sweep-rho", vec![Strategy::Partial], vec![], grid.to_vec(), options, out))?;

    if let Some(bad) = sweep.endpoints.iter().find(|c| !c.passes()) {
        return Err(BenchError::Endpoint { rho: bad.rho, value: bad.value, reference: bad.reference });
    }
    Ok(sweep)
}

/// Re-checks a written `allocation.csv` / `energy.csv` pair against the
/// scenario's constraints.
pub fn validate_outputs(loaded: &LoadedConfig, dir: &Path) -> Result<ConstraintReport, BenchError> {
    let plan = read_plan(dir, &loaded.scenario)?;
    validate_plan(&plan, &loaded.scenario).map_err(|source| BenchError::Artifact {
        path: dir.to_path_buf(),
        reason: source.to_string(),
    })
}
