//! Interior-point solver for separable convex programs with linear constraints.
//!
//! The objective is a sum of one-variable terms (`2^(ax)`-type exponentials,
//! cubics `(c − x)³` on `x ≤ c`, and linear terms), so the Hessian is diagonal
//! apart from the outer products the barrier adds for each inequality row.
//! A phase-1 program finds a strictly feasible start; the barrier weight then
//! grows geometrically until the duality gap is below tolerance.

mod barrier;
mod kkt;
mod linalg;
mod program;

use std::collections::BTreeSet;

use serde::Serialize;
use thiserror::Error;

pub use kkt::KktResiduals;
pub use program::{ConvexProgram, FamilyId, LinearRow, Term};

use barrier::Workspace;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("malformed program: {0}")]
    Malformed(String),
    #[error("infeasible: no strictly feasible point (phase-1 optimum {violation:e}); binding families: {}", families.join(", "))]
    Infeasible { families: Vec<String>, violation: f64 },
    #[error("numerical failure: {0}")]
    Numerical(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Optimal,
    Infeasible,
    MaxIterations,
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Status::Optimal => "optimal",
            Status::Infeasible => "infeasible",
            Status::MaxIterations => "max-iterations",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Relative tolerance for every KKT residual and for the duality gap.
    pub tolerance: f64,
    /// Cap on the total number of Newton steps.
    pub max_iterations: usize,
    pub initial_barrier: f64,
    pub barrier_growth: f64,
    /// Equality rows above this count use a full KKT factorization instead
    /// of the Schur complement.
    pub schur_row_limit: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tolerance: 1e-8,
            max_iterations: 5000,
            initial_barrier: 1.0,
            barrier_growth: 10.0,
            schur_row_limit: 1000,
        }
    }
}

/// Objective after one completed centering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OuterStep {
    pub barrier: f64,
    pub objective: f64,
    pub newton_steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub status: Status,
    pub x: Vec<f64>,
    pub eq_duals: Vec<f64>,
    pub ineq_duals: Vec<f64>,
    pub lower_duals: Vec<f64>,
    pub upper_duals: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub outer: Vec<OuterStep>,
    pub residuals: KktResiduals,
}

/// Outcome of the phase-1 search.
#[derive(Debug, Clone, PartialEq)]
pub enum Feasibility {
    /// A point strictly inside every inequality and bound, satisfying the
    /// equalities to roundoff.
    Feasible(Vec<f64>),
    Infeasible { families: Vec<String>, violation: f64 },
}

pub(crate) fn assemble_solution(
    program: &ConvexProgram,
    x: Vec<f64>,
    eq_duals: Vec<f64>,
    (ineq_duals, lower_duals, upper_duals): (Vec<f64>, Vec<f64>, Vec<f64>),
    status: Status,
    iterations: usize,
    outer: Vec<OuterStep>,
) -> Solution {
    let residuals = kkt::kkt_residuals(program, &x, &eq_duals, &ineq_duals, &lower_duals, &upper_duals);
    Solution {
        status,
        objective: program.objective(&x),
        x,
        eq_duals,
        ineq_duals,
        lower_duals,
        upper_duals,
        iterations,
        outer,
        residuals,
    }
}

/// Residuals of `solution` against `program`, recomputed from scratch.
pub fn kkt_residuals(program: &ConvexProgram, solution: &Solution) -> KktResiduals {
    kkt::kkt_residuals(
        program,
        &solution.x,
        &solution.eq_duals,
        &solution.ineq_duals,
        &solution.lower_duals,
        &solution.upper_duals,
    )
}

fn box_center(program: &ConvexProgram) -> Vec<f64> {
    program
        .lower
        .iter()
        .zip(&program.upper)
        .map(|(&l, &u)| match (l.is_finite(), u.is_finite()) {
            (true, true) => 0.5 * (l + u),
            (true, false) => l + 1.0f64.max(l.abs()),
            (false, true) => u - 1.0f64.max(u.abs()),
            (false, false) => 0.0,
        })
        .collect()
}

/// Finds a strictly feasible point or names the constraint families that
/// block one.
pub fn check_feasibility(program: &ConvexProgram) -> Result<Feasibility, SolverError> {
    check_feasibility_with(program, &SolveOptions::default())
}

fn check_feasibility_with(program: &ConvexProgram, options: &SolveOptions) -> Result<Feasibility, SolverError> {
    program.validate()?;
    faer::set_global_parallelism(faer::Par::Seq);
    let n = program.num_vars();
    let keep: Vec<bool> = program.redundant_rows().iter().map(|r| !r).collect();

    let mut x0 = box_center(program);
    let eq_refs: Vec<&LinearRow> = program.equalities.iter().collect();
    linalg::project_onto_equalities(&eq_refs, &mut x0)?;

    let mut violation = f64::NEG_INFINITY;
    for (row, _) in program.inequalities.iter().zip(&keep).filter(|(_, k)| **k) {
        violation = violation.max(row.dot(&x0) - row.rhs);
    }
    for j in 0..n {
        if program.lower[j].is_finite() {
            violation = violation.max(program.lower[j] - x0[j]);
        }
        if program.upper[j].is_finite() {
            violation = violation.max(x0[j] - program.upper[j]);
        }
    }
    if violation < 0.0 {
        return Ok(Feasibility::Feasible(x0));
    }

    // minimize s  s.t.  a·x − s ≤ b,  l − x ≤ s,  x − u ≤ s,  A_eq x = b_eq
    let mut aux = ConvexProgram::new();
    let mut origin: Vec<String> = Vec::new();
    for _ in 0..n {
        aux.add_variable(f64::NEG_INFINITY, f64::INFINITY, "phase-1", "phase-1");
    }
    let s = aux.add_variable(-1.0, f64::INFINITY, "phase-1 floor", "phase-1");
    aux.add_term(Term::Linear { var: s, coef: 1.0 });
    for row in program.equalities.iter() {
        aux.add_equality(row.coeffs.clone(), row.rhs, program.family_name(row.family));
    }
    for (row, _) in program.inequalities.iter().zip(&keep).filter(|(_, k)| **k) {
        let mut coeffs = row.coeffs.clone();
        coeffs.push((s, -1.0));
        let name = program.family_name(row.family);
        aux.add_inequality(coeffs, row.rhs, name);
        origin.push(name.to_string());
    }
    for j in 0..n {
        if program.lower[j].is_finite() {
            let name = program.family_name(program.lower_family[j]);
            aux.add_inequality(vec![(j, -1.0), (s, -1.0)], -program.lower[j], name);
            origin.push(name.to_string());
        }
        if program.upper[j].is_finite() {
            let name = program.family_name(program.upper_family[j]);
            aux.add_inequality(vec![(j, 1.0), (s, -1.0)], program.upper[j], name);
            origin.push(name.to_string());
        }
    }
    // the free x's are only bounded through the rows above
    let aux_keep = vec![true; aux.inequalities.len()];
    let mut start = x0;
    start.push(violation + 1.0);
    let phase_options = SolveOptions { tolerance: options.tolerance.max(1e-10), ..*options };
    let ws = Workspace::new(&aux, &aux_keep, &phase_options)?;
    let stop = |x: &[f64]| x[n] < 0.0;
    let run = ws.run(start, &phase_options, Some(&stop))?;
    if run.x[n] < 0.0 {
        let mut x = run.x;
        x.truncate(n);
        return Ok(Feasibility::Feasible(x));
    }
    let (ineq_duals, _, _) = ws.dual_estimates(&run.x, run.t, &run.last_step);
    let zmax = ineq_duals.iter().fold(0.0f64, |m, z| m.max(*z));
    let mut families = BTreeSet::new();
    for (z, name) in ineq_duals.iter().zip(&origin) {
        if *z > 1e-6 * zmax {
            families.insert(name.clone());
        }
    }
    let ymax = run.eq_multipliers.iter().fold(0.0f64, |m, y| m.max(y.abs()));
    for (y, row) in run.eq_multipliers.iter().zip(&program.equalities) {
        if y.abs() > 1e-6 * ymax && ymax > 0.0 {
            families.insert(program.family_name(row.family).to_string());
        }
    }
    Ok(Feasibility::Infeasible { families: families.into_iter().collect(), violation: run.x[n] })
}

/// Solves `program` to the relative tolerance in `options`.
///
/// Returns `Err(Infeasible)` when phase-1 finds no interior point; hitting the
/// iteration cap returns the last iterate with `Status::MaxIterations`.
pub fn solve(program: &ConvexProgram, options: &SolveOptions) -> Result<Solution, SolverError> {
    let x0 = match check_feasibility_with(program, options)? {
        Feasibility::Feasible(x) => x,
        Feasibility::Infeasible { families, violation } => {
            return Err(SolverError::Infeasible { families, violation });
        }
    };
    let keep: Vec<bool> = program.redundant_rows().iter().map(|r| !r).collect();
    let ws = Workspace::new(program, &keep, options)?;
    debug_assert!(ws.strictly_feasible(&x0));
    let run = ws.run(x0, options, None)?;
    let duals = ws.dual_estimates(&run.x, run.t, &run.last_step);
    Ok(assemble_solution(
        program,
        run.x,
        run.eq_multipliers,
        duals,
        run.status,
        run.newton_steps,
        run.outer,
    ))
}
