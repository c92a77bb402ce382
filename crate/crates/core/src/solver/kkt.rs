//! First-order optimality residuals, evaluated from the program and the
//! reported primal/dual vectors only.

use serde::Serialize;

use super::program::ConvexProgram;

/// Relative KKT residuals. Each one is dimensionless and compared with the
/// solver tolerance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct KktResiduals {
    /// `‖∇f + A_eqᵀy + A_inᵀz − λ_l + λ_u‖∞ / (1 + ‖∇f‖∞)`
    pub stationarity: f64,
    /// `‖A_eq x − b_eq‖∞ / (1 + ‖b‖∞)`
    pub primal_equality: f64,
    /// Largest inequality or bound violation over `1 + ‖b‖∞`.
    pub primal_inequality: f64,
    /// Largest negative multiplier over `1 + ‖∇f‖∞`.
    pub dual_feasibility: f64,
    /// Largest `multiplier × slack` over `1 + |f|`.
    pub complementarity: f64,
    /// `Σ multiplier × slack` over `1 + |f|`.
    pub duality_gap: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        [
            self.stationarity,
            self.primal_equality,
            self.primal_inequality,
            self.dual_feasibility,
            self.complementarity,
            self.duality_gap,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn within(&self, tolerance: f64) -> bool {
        self.max() <= tolerance
    }
}

pub fn kkt_residuals(
    program: &ConvexProgram,
    x: &[f64],
    eq_duals: &[f64],
    ineq_duals: &[f64],
    lower_duals: &[f64],
    upper_duals: &[f64],
) -> KktResiduals {
    let f = program.objective(x);
    let grad = program.gradient(x);
    let grad_norm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));

    let mut r = grad.clone();
    for (row, y) in program.equalities.iter().zip(eq_duals) {
        for &(j, a) in &row.coeffs {
            r[j] += a * y;
        }
    }
    for (row, z) in program.inequalities.iter().zip(ineq_duals) {
        for &(j, a) in &row.coeffs {
            r[j] += a * z;
        }
    }
    for j in 0..program.num_vars() {
        if program.lower[j].is_finite() {
            r[j] -= lower_duals[j];
        }
        if program.upper[j].is_finite() {
            r[j] += upper_duals[j];
        }
    }
    let stationarity = r.iter().fold(0.0f64, |m, v| m.max(v.abs())) / (1.0 + grad_norm);

    let mut b_scale = 0.0f64;
    let mut eq_viol = 0.0f64;
    for row in &program.equalities {
        b_scale = b_scale.max(row.rhs.abs());
        eq_viol = eq_viol.max((row.dot(x) - row.rhs).abs());
    }
    let mut in_viol = 0.0f64;
    let mut neg_dual = 0.0f64;
    let mut worst_product = 0.0f64;
    let mut gap = 0.0;
    let mut pair = |slack: f64, dual: f64| {
        in_viol = in_viol.max(-slack);
        neg_dual = neg_dual.max(-dual);
        let p = (dual * slack).abs();
        worst_product = worst_product.max(p);
        gap += dual * slack;
    };
    for (row, &z) in program.inequalities.iter().zip(ineq_duals) {
        b_scale = b_scale.max(row.rhs.abs());
        pair(row.rhs - row.dot(x), z);
    }
    for j in 0..program.num_vars() {
        if program.lower[j].is_finite() {
            b_scale = b_scale.max(program.lower[j].abs());
            pair(x[j] - program.lower[j], lower_duals[j]);
        }
        if program.upper[j].is_finite() {
            b_scale = b_scale.max(program.upper[j].abs());
            pair(program.upper[j] - x[j], upper_duals[j]);
        }
    }
    let f_scale = 1.0 + f.abs();
    KktResiduals {
        stationarity,
        primal_equality: eq_viol / (1.0 + b_scale),
        primal_inequality: in_viol.max(0.0) / (1.0 + b_scale),
        dual_feasibility: neg_dual.max(0.0) / (1.0 + grad_norm),
        complementarity: worst_product / f_scale,
        duality_gap: gap.abs() / f_scale,
    }
}
