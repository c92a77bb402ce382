//! Log-barrier path following with damped Newton centering.
//!
//! For barrier weight `t` the centering problem is
//! `min t f(x) − Σ log(b − a·x) − Σ log(x − l) − Σ log(u − x)` s.t. `A x = b`.
//! Newton steps with equality constraints go through the Schur complement
//! `A H⁻¹ Aᵀ` when there are few equality rows, or through a sparse LU of the
//! full KKT matrix otherwise.

use log::trace;

use super::linalg::{dense_cholesky, dense_cholesky_solve, HessianFactor, HessianPattern, KktFactor, KktSystem};
use super::kkt::{kkt_residuals, KktResiduals};
use super::program::{ConvexProgram, LinearRow};
use super::{OuterStep, SolveOptions, SolverError, Status};

const ARMIJO: f64 = 0.01;
const BACKTRACK: f64 = 0.5;
const MIN_STEP: f64 = 1e-14;
/// Centering stops once the stationarity residual of the central-path dual
/// estimates is this fraction of the solver tolerance.
const CENTERING_FRACTION: f64 = 0.1;
/// Largest `|a·dx| / s` over the barrier terms for a point to count as centred;
/// keeps the corrected dual estimates positive and close to `1 / (t s)`.
const MAX_STEP_RATIO: f64 = 0.5;
const REFINEMENT_PASSES: usize = 2;
const MAX_CENTERING_STEPS: usize = 200;
const MAX_BARRIER_WEIGHT: f64 = 1e22;

pub(crate) struct Workspace<'a> {
    prog: &'a ConvexProgram,
    /// Inequality rows kept after presolve, with their original index.
    rows: Vec<(usize, &'a LinearRow)>,
    eq: Vec<&'a LinearRow>,
    lower_vars: Vec<usize>,
    upper_vars: Vec<usize>,
    pattern: HessianPattern,
    kkt: Option<KktSystem>,
}

pub(crate) struct Newton {
    pub dx: Vec<f64>,
    pub w: Vec<f64>,
    pub grad: Vec<f64>,
    pub decrement: f64,
}

enum StepSolver<'a> {
    Plain(HessianFactor),
    Schur { factor: HessianFactor, h_inv_at: Vec<Vec<f64>>, schur: Vec<f64> },
    Kkt(KktFactor<'a>),
}

pub(crate) struct BarrierRun {
    pub x: Vec<f64>,
    pub t: f64,
    pub newton_steps: usize,
    pub outer: Vec<OuterStep>,
    pub status: Status,
    /// Equality multipliers `w / t` from the last Newton system at `x`.
    pub eq_multipliers: Vec<f64>,
    /// Newton direction computed at `x`, used to correct the dual estimates.
    pub last_step: Vec<f64>,
}

impl<'a> Workspace<'a> {
    pub fn new(prog: &'a ConvexProgram, keep_row: &[bool], options: &SolveOptions) -> Result<Self, SolverError> {
        let n = prog.num_vars();
        let rows: Vec<(usize, &LinearRow)> = prog
            .inequalities
            .iter()
            .enumerate()
            .filter(|(i, _)| keep_row[*i])
            .collect();
        let eq: Vec<&LinearRow> = prog.equalities.iter().collect();
        let lower_vars = (0..n).filter(|&j| prog.lower[j].is_finite()).collect();
        let upper_vars = (0..n).filter(|&j| prog.upper[j].is_finite()).collect();
        let row_refs: Vec<&LinearRow> = rows.iter().map(|&(_, r)| r).collect();
        let pattern = HessianPattern::new(n, &row_refs)?;
        let kkt = if eq.len() > options.schur_row_limit {
            Some(KktSystem::new(&pattern, &eq)?)
        } else {
            None
        };
        Ok(Workspace { prog, rows, eq, lower_vars, upper_vars, pattern, kkt })
    }

    /// Number of barrier terms; `m / t` is the duality gap on the central path.
    pub fn barrier_terms(&self) -> usize {
        self.rows.len() + self.lower_vars.len() + self.upper_vars.len()
    }

    pub fn slacks(&self, x: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|(_, r)| r.rhs - r.dot(x)).collect()
    }

    pub fn strictly_feasible(&self, x: &[f64]) -> bool {
        self.slacks(x).iter().all(|&s| s > 0.0)
            && self.lower_vars.iter().all(|&j| x[j] > self.prog.lower[j])
            && self.upper_vars.iter().all(|&j| x[j] < self.prog.upper[j])
    }

    pub fn newton(&self, x: &[f64], t: f64) -> Result<Newton, SolverError> {
        let prog = self.prog;
        let n = prog.num_vars();
        let slacks = self.slacks(x);
        if slacks.iter().any(|&s| !(s > 0.0)) {
            return Err(SolverError::Numerical("iterate left the strict interior".into()));
        }
        let mut grad = vec![0.0; n];
        let mut values = vec![0.0; self.pattern.nnz()];
        for term in &prog.terms {
            let j = term.var();
            grad[j] += t * term.derivative(x[j]);
            values[self.pattern.diag_slot(j)] += t * term.second_derivative(x[j]);
        }
        for &j in &self.lower_vars {
            let s = x[j] - prog.lower[j];
            grad[j] -= 1.0 / s;
            values[self.pattern.diag_slot(j)] += 1.0 / (s * s);
        }
        for &j in &self.upper_vars {
            let s = prog.upper[j] - x[j];
            grad[j] += 1.0 / s;
            values[self.pattern.diag_slot(j)] += 1.0 / (s * s);
        }
        for (r, ((_, row), &s)) in self.rows.iter().zip(&slacks).enumerate() {
            let inv = 1.0 / s;
            for &(j, a) in &row.coeffs {
                grad[j] += a * inv;
            }
            let w = inv * inv;
            let slots = self.pattern.row_slots(r);
            let mut k = 0;
            for p in 0..row.coeffs.len() {
                let ap = row.coeffs[p].1;
                for q in p..row.coeffs.len() {
                    values[slots[k]] += w * ap * row.coeffs[q].1;
                    k += 1;
                }
            }
        }
        let residual: Vec<f64> = self.eq.iter().map(|r| r.rhs - r.dot(x)).collect();

        let hessian = values.clone();
        let solver = if let Some(kkt) = &self.kkt {
            StepSolver::Kkt(kkt.factor(&values)?)
        } else {
            let factor = self.pattern.factor(&mut values)?;
            if self.eq.is_empty() {
                StepSolver::Plain(factor)
            } else {
                let m = self.eq.len();
                let cols: Vec<Vec<f64>> = self
                    .eq
                    .iter()
                    .map(|row| {
                        let mut col = vec![0.0; n];
                        for &(j, a) in &row.coeffs {
                            col[j] = a;
                        }
                        col
                    })
                    .collect();
                let h_inv_at = factor.solve_columns(&cols);
                let mut schur = vec![0.0; m * m];
                for (i, row) in self.eq.iter().enumerate() {
                    for k in 0..m {
                        schur[i * m + k] = row.dot(&h_inv_at[k]);
                    }
                }
                for i in 0..m {
                    for k in 0..i {
                        let avg = 0.5 * (schur[i * m + k] + schur[k * m + i]);
                        schur[i * m + k] = avg;
                        schur[k * m + i] = avg;
                    }
                }
                dense_cholesky(&mut schur, m)?;
                StepSolver::Schur { factor, h_inv_at, schur }
            }
        };
        let neg_grad: Vec<f64> = grad.iter().map(|g| -g).collect();
        let (mut dx, mut w) = self.solve_step(&solver, &neg_grad, &residual);
        // Refinement against the unregularized Hessian.
        for _ in 0..REFINEMENT_PASSES {
            let hdx = self.pattern.multiply(&hessian, &dx);
            let mut top: Vec<f64> = neg_grad.iter().zip(&hdx).map(|(g, h)| g - h).collect();
            for (row, wk) in self.eq.iter().zip(&w) {
                for &(j, a) in &row.coeffs {
                    top[j] -= a * wk;
                }
            }
            let bottom: Vec<f64> = self.eq.iter().zip(&residual).map(|(r, res)| res - r.dot(&dx)).collect();
            let (ddx, dw) = self.solve_step(&solver, &top, &bottom);
            dx.iter_mut().zip(&ddx).for_each(|(d, e)| *d += e);
            w.iter_mut().zip(&dw).for_each(|(d, e)| *d += e);
        }
        let gdx: f64 = grad.iter().zip(&dx).map(|(g, d)| g * d).sum();
        let wr: f64 = w.iter().zip(&residual).map(|(a, b)| a * b).sum();
        let decrement = (-gdx - wr).max(0.0);
        Ok(Newton { dx, w, grad, decrement })
    }

    /// Solves `[H Aᵀ; A 0] [dx; w] = [top; bottom]` with a prepared factorization.
    fn solve_step(&self, solver: &StepSolver, top: &[f64], bottom: &[f64]) -> (Vec<f64>, Vec<f64>) {
        match solver {
            StepSolver::Kkt(f) => f.solve(top, bottom),
            StepSolver::Plain(f) => {
                let mut cols = f.solve_columns(&[top.to_vec()]);
                (cols.pop().unwrap_or_default(), Vec::new())
            }
            StepSolver::Schur { factor, h_inv_at, schur } => {
                let v = factor.solve_columns(&[top.to_vec()]).pop().unwrap_or_default();
                let m = self.eq.len();
                let mut w: Vec<f64> = self.eq.iter().zip(bottom).map(|(r, b)| r.dot(&v) - b).collect();
                dense_cholesky_solve(schur, m, &mut w);
                let mut dx = v;
                for (wk, col) in w.iter().zip(h_inv_at) {
                    for (d, c) in dx.iter_mut().zip(col) {
                        *d -= wk * c;
                    }
                }
                (dx, w)
            }
        }
    }

    fn max_step(&self, x: &[f64], dx: &[f64], slacks: &[f64]) -> f64 {
        let prog = self.prog;
        let mut alpha = f64::INFINITY;
        for ((_, row), &s) in self.rows.iter().zip(slacks) {
            let ds = -row.dot(dx);
            if ds < 0.0 {
                alpha = alpha.min(-s / ds);
            }
        }
        for &j in &self.lower_vars {
            if dx[j] < 0.0 {
                alpha = alpha.min((x[j] - prog.lower[j]) / -dx[j]);
            }
        }
        for &j in &self.upper_vars {
            if dx[j] > 0.0 {
                alpha = alpha.min((prog.upper[j] - x[j]) / dx[j]);
            }
        }
        alpha
    }

    /// `φ_t(x + α dx) − φ_t(x)`, summed term by term to avoid cancellation.
    fn barrier_increment(&self, x: &[f64], dx: &[f64], slacks: &[f64], row_dir: &[f64], t: f64, alpha: f64) -> f64 {
        let prog = self.prog;
        let mut delta = 0.0;
        for term in &prog.terms {
            let j = term.var();
            delta += t * term.increment(x[j], alpha * dx[j]);
        }
        for (&s, &ad) in slacks.iter().zip(row_dir) {
            delta -= (-alpha * ad / s).ln_1p();
        }
        for &j in &self.lower_vars {
            delta -= (alpha * dx[j] / (x[j] - prog.lower[j])).ln_1p();
        }
        for &j in &self.upper_vars {
            delta -= (-alpha * dx[j] / (prog.upper[j] - x[j])).ln_1p();
        }
        if delta.is_nan() {
            f64::INFINITY
        } else {
            delta
        }
    }

    /// Runs the barrier path from a strictly feasible `x0`.
    pub fn run(
        &self,
        x0: Vec<f64>,
        options: &SolveOptions,
        stop: Option<&dyn Fn(&[f64]) -> bool>,
    ) -> Result<BarrierRun, SolverError> {
        let prog = self.prog;
        let mut x = x0;
        let mut t = options.initial_barrier;
        let m_terms = self.barrier_terms() as f64;
        let mut steps = 0usize;
        let mut outer = Vec::new();
        let mut eq_multipliers = vec![0.0; self.eq.len()];
        let mut last_step = vec![0.0; prog.num_vars()];
        let centered = |newton: &Newton, x: &[f64], t: f64| {
            self.step_ratio(x, &newton.dx) <= MAX_STEP_RATIO && {
                let y: Vec<f64> = newton.w.iter().map(|w| w / t).collect();
                let stationarity = self.kkt_at(x, t, &y, &newton.dx).stationarity;
                stationarity <= CENTERING_FRACTION * options.tolerance
            }
        };

        loop {
            let mut centering_steps = 0;
            loop {
                let newton = self.newton(&x, t)?;
                eq_multipliers = newton.w.iter().map(|w| w / t).collect();
                last_step.clone_from(&newton.dx);
                if centered(&newton, &x, t) || centering_steps >= MAX_CENTERING_STEPS {
                    break;
                }
                if steps >= options.max_iterations {
                    return Ok(BarrierRun {
                        x,
                        t,
                        newton_steps: steps,
                        outer,
                        status: Status::MaxIterations,
                        eq_multipliers,
                        last_step,
                    });
                }
                let slacks = self.slacks(&x);
                let row_dir: Vec<f64> = self.rows.iter().map(|(_, r)| r.dot(&newton.dx)).collect();
                let slope: f64 = newton.grad.iter().zip(&newton.dx).map(|(g, d)| g * d).sum();
                let mut alpha = (0.99 * self.max_step(&x, &newton.dx, &slacks)).min(1.0);
                let mut accepted = None;
                while alpha >= MIN_STEP {
                    let delta = self.barrier_increment(&x, &newton.dx, &slacks, &row_dir, t, alpha);
                    if delta <= ARMIJO * alpha * slope.min(0.0) {
                        let trial: Vec<f64> = x.iter().zip(&newton.dx).map(|(xi, di)| xi + alpha * di).collect();
                        if self.strictly_feasible(&trial) {
                            accepted = Some(trial);
                            break;
                        }
                    }
                    alpha *= BACKTRACK;
                }
                steps += 1;
                centering_steps += 1;
                match accepted {
                    Some(trial) => x = trial,
                    None => {
                        trace!("line search stalled at t={t:e}, decrement={:e}", newton.decrement);
                        break;
                    }
                }
                if let Some(stop) = stop {
                    if stop(&x) {
                        return Ok(BarrierRun {
                            x,
                            t,
                            newton_steps: steps,
                            outer,
                            status: Status::Optimal,
                            eq_multipliers,
                            last_step,
                        });
                    }
                }
            }
            let objective = prog.objective(&x);
            outer.push(OuterStep { barrier: t, objective, newton_steps: centering_steps });
            trace!("t={t:e} f={objective:.12e} steps={centering_steps}");

            let gap = m_terms / t;
            if gap <= options.tolerance * (1.0 + objective.abs()) {
                let residuals = self.residuals_at(&x, t, &eq_multipliers, &last_step);
                if residuals <= options.tolerance || t >= MAX_BARRIER_WEIGHT {
                    let status = if residuals <= options.tolerance { Status::Optimal } else { Status::MaxIterations };
                    return Ok(BarrierRun {
                        x,
                        t,
                        newton_steps: steps,
                        outer,
                        status,
                        eq_multipliers,
                        last_step,
                    });
                }
            }
            if m_terms == 0.0 {
                return Ok(BarrierRun {
                    x,
                    t,
                    newton_steps: steps,
                    outer,
                    status: Status::Optimal,
                    eq_multipliers,
                    last_step,
                });
            }
            t *= options.barrier_growth;
        }
    }

    /// Largest relative KKT residual for the dual estimates implied by `t`.
    fn residuals_at(&self, x: &[f64], t: f64, eq_multipliers: &[f64], dx: &[f64]) -> f64 {
        self.kkt_at(x, t, eq_multipliers, dx).max()
    }

    fn kkt_at(&self, x: &[f64], t: f64, eq_multipliers: &[f64], dx: &[f64]) -> KktResiduals {
        let (ineq, lower, upper) = self.dual_estimates(x, t, dx);
        kkt_residuals(self.prog, x, eq_multipliers, &ineq, &lower, &upper)
    }

    /// Largest relative slack change `|a·dx| / s` along `dx`.
    fn step_ratio(&self, x: &[f64], dx: &[f64]) -> f64 {
        let prog = self.prog;
        let mut worst = 0.0f64;
        for ((_, row), s) in self.rows.iter().zip(self.slacks(x)) {
            worst = worst.max((row.dot(dx) / s).abs());
        }
        for &j in &self.lower_vars {
            worst = worst.max((dx[j] / (x[j] - prog.lower[j])).abs());
        }
        for &j in &self.upper_vars {
            worst = worst.max((dx[j] / (prog.upper[j] - x[j])).abs());
        }
        worst
    }

    /// Multipliers per inequality row (0 for dropped rows), lower bound and
    /// upper bound.
    ///
    /// A barrier term with slack `s`, whose slack changes by `ds` along the
    /// Newton direction `dx`, gets `z = (1 − ds / s) / (t s)`. With these and `y = w / t` the stationarity
    /// residual is exactly `∇²f dx`, so it does not depend on how finely the
    /// slacks are resolved in floating point.
    pub fn dual_estimates(&self, x: &[f64], t: f64, dx: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let prog = self.prog;
        let n = prog.num_vars();
        let z = |s: f64, ds: f64| ((1.0 - ds / s) / (t * s)).max(0.0);
        let mut ineq = vec![0.0; prog.inequalities.len()];
        for (&(i, row), s) in self.rows.iter().zip(self.slacks(x)) {
            ineq[i] = z(s, -row.dot(dx));
        }
        let mut lower = vec![0.0; n];
        for &j in &self.lower_vars {
            lower[j] = z(x[j] - prog.lower[j], dx[j]);
        }
        let mut upper = vec![0.0; n];
        for &j in &self.upper_vars {
            upper[j] = z(prog.upper[j] - x[j], -dx[j]);
        }
        (ineq, lower, upper)
    }
}
