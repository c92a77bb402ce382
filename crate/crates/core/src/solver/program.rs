use std::collections::HashMap;
use std::f64::consts::LN_2;

use super::SolverError;

/// One separable objective term acting on a single variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Term {
    /// `coef · (2^(rate·x) − 1)`
    Exp2 { var: usize, coef: f64, rate: f64 },
    /// `coef · (shift − x)³`, only valid while `x ≤ shift`.
    Cubic { var: usize, coef: f64, shift: f64 },
    /// `coef · x`
    Linear { var: usize, coef: f64 },
}

impl Term {
    pub fn var(&self) -> usize {
        match *self {
            Term::Exp2 { var, .. } | Term::Cubic { var, .. } | Term::Linear { var, .. } => var,
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        match *self {
            Term::Exp2 { coef, rate, .. } => coef * (rate * x * LN_2).exp_m1(),
            Term::Cubic { coef, shift, .. } => {
                let u = shift - x;
                coef * u * u * u
            }
            Term::Linear { coef, .. } => coef * x,
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            Term::Exp2 { coef, rate, .. } => coef * rate * LN_2 * (rate * x * LN_2).exp(),
            Term::Cubic { coef, shift, .. } => {
                let u = shift - x;
                -3.0 * coef * u * u
            }
            Term::Linear { coef, .. } => coef,
        }
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        match *self {
            Term::Exp2 { coef, rate, .. } => {
                let k = rate * LN_2;
                coef * k * k * (k * x).exp()
            }
            Term::Cubic { coef, shift, .. } => 6.0 * coef * (shift - x),
            Term::Linear { .. } => 0.0,
        }
    }

    /// `value(x + step) − value(x)` without cancellation.
    pub fn increment(&self, x: f64, step: f64) -> f64 {
        match *self {
            Term::Exp2 { coef, rate, .. } => {
                let k = rate * LN_2;
                coef * (k * x).exp() * (k * step).exp_m1()
            }
            Term::Cubic { coef, shift, .. } => {
                let u = shift - x;
                -coef * step * (3.0 * u * u - 3.0 * u * step + step * step)
            }
            Term::Linear { coef, .. } => coef * step,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FamilyId(pub u32);

/// A sparse linear row `coeffs · x (= or ≤) rhs`, tagged with its constraint family.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRow {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
    pub family: FamilyId,
}

impl LinearRow {
    pub fn dot(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }
}

/// Minimize a sum of separable convex terms subject to
/// `A_eq x = b_eq`, `A_in x ≤ b_in`, `lower ≤ x ≤ upper`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConvexProgram {
    pub terms: Vec<Term>,
    pub equalities: Vec<LinearRow>,
    pub inequalities: Vec<LinearRow>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub lower_family: Vec<FamilyId>,
    pub upper_family: Vec<FamilyId>,
    families: Vec<String>,
    family_index: HashMap<String, FamilyId>,
}

impl ConvexProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.lower.len()
    }

    /// Interns a constraint family name.
    pub fn family(&mut self, name: &str) -> FamilyId {
        if let Some(&id) = self.family_index.get(name) {
            return id;
        }
        let id = FamilyId(self.families.len() as u32);
        self.families.push(name.to_string());
        self.family_index.insert(name.to_string(), id);
        id
    }

    pub fn family_name(&self, id: FamilyId) -> &str {
        &self.families[id.0 as usize]
    }

    pub fn add_variable(&mut self, lower: f64, upper: f64, lower_family: &str, upper_family: &str) -> usize {
        let lf = self.family(lower_family);
        let uf = self.family(upper_family);
        self.lower.push(lower);
        self.upper.push(upper);
        self.lower_family.push(lf);
        self.upper_family.push(uf);
        self.lower.len() - 1
    }

    pub fn add_term(&mut self, term: Term) {
        self.terms.push(term);
    }

    pub fn add_equality(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64, family: &str) {
        let family = self.family(family);
        self.equalities.push(LinearRow { coeffs: merge(coeffs), rhs, family });
    }

    pub fn add_inequality(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64, family: &str) {
        let family = self.family(family);
        self.inequalities.push(LinearRow { coeffs: merge(coeffs), rhs, family });
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|t| t.value(x[t.var()])).sum()
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.num_vars()];
        for t in &self.terms {
            g[t.var()] += t.derivative(x[t.var()]);
        }
        g
    }

    /// Checks dimensions and the convexity certificate.
    pub fn validate(&self) -> Result<(), SolverError> {
        let n = self.num_vars();
        if self.upper.len() != n || self.lower_family.len() != n || self.upper_family.len() != n {
            return Err(SolverError::Malformed("bound vectors differ in length".into()));
        }
        for (i, (&l, &u)) in self.lower.iter().zip(&self.upper).enumerate() {
            if l.is_nan() || u.is_nan() || l == f64::INFINITY || u == f64::NEG_INFINITY {
                return Err(SolverError::Malformed(format!("variable {i} has invalid bounds [{l}, {u}]")));
            }
            if !(l < u) {
                return Err(SolverError::Malformed(format!(
                    "variable {i} has an empty or degenerate box [{l}, {u}]"
                )));
            }
            if !l.is_finite() && !u.is_finite() {
                return Err(SolverError::Malformed(format!("variable {i} has no finite bound")));
            }
        }
        for t in &self.terms {
            let v = t.var();
            if v >= n {
                return Err(SolverError::Malformed(format!("term refers to variable {v} of {n}")));
            }
            match *t {
                Term::Exp2 { coef, rate, .. } => {
                    if !(coef >= 0.0 && coef.is_finite() && rate.is_finite()) {
                        return Err(SolverError::Malformed(format!(
                            "exponential term on variable {v} has coefficient {coef}, rate {rate}"
                        )));
                    }
                }
                Term::Cubic { coef, shift, .. } => {
                    if !(coef >= 0.0 && coef.is_finite() && shift.is_finite()) {
                        return Err(SolverError::Malformed(format!(
                            "cubic term on variable {v} has coefficient {coef}"
                        )));
                    }
                    if self.upper[v] > shift {
                        return Err(SolverError::Malformed(format!(
                            "cubic term on variable {v} is not convex above {shift} (upper bound {})",
                            self.upper[v]
                        )));
                    }
                }
                Term::Linear { coef, .. } => {
                    if !coef.is_finite() {
                        return Err(SolverError::Malformed(format!("linear term on variable {v} is not finite")));
                    }
                }
            }
        }
        for row in self.equalities.iter().chain(&self.inequalities) {
            if !row.rhs.is_finite() {
                return Err(SolverError::Malformed("row with non-finite right-hand side".into()));
            }
            for &(j, a) in &row.coeffs {
                if j >= n || !a.is_finite() {
                    return Err(SolverError::Malformed(format!("row entry ({j}, {a}) out of range")));
                }
            }
        }
        Ok(())
    }

    /// Largest value `a·x` can take inside the variable box.
    pub fn max_activity(&self, row: &LinearRow) -> f64 {
        row.coeffs
            .iter()
            .map(|&(j, a)| if a > 0.0 { a * self.upper[j] } else { a * self.lower[j] })
            .sum()
    }

    /// Inequality rows that the variable box alone already satisfies strictly.
    pub fn redundant_rows(&self) -> Vec<bool> {
        self.inequalities
            .iter()
            .map(|row| {
                let m = self.max_activity(row);
                m.is_finite() && m < row.rhs - 1e-9 * (1.0 + row.rhs.abs())
            })
            .collect()
    }
}

fn merge(mut coeffs: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    coeffs.sort_by_key(|&(j, _)| j);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(coeffs.len());
    for (j, a) in coeffs {
        match out.last_mut() {
            Some(last) if last.0 == j => last.1 += a,
            _ => out.push((j, a)),
        }
    }
    out.retain(|&(_, a)| a != 0.0);
    out
}
