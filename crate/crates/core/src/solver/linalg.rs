//! Sparse factorizations behind the Newton steps.

use std::collections::BTreeMap;

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::cholesky::ldlt::factor::LdltRegularization;
use faer::linalg::solvers::Solve;
use faer::sparse::linalg::cholesky::{factorize_symbolic_cholesky, LdltRef, SymbolicCholesky, SymmetricOrdering};
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::{SparseColMat, SparseColMatRef, SymbolicSparseColMatRef, Triplet};
use faer::{Conj, Mat, Par, Side};

use super::program::LinearRow;
use super::SolverError;

/// Lower-triangle CSC pattern of `diag + Σ_r a_r a_rᵀ`.
pub(crate) struct HessianPattern {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    diag: Vec<usize>,
    /// For every inequality row, the value slots of its outer product, in
    /// `(p, q)` order with `p ≤ q` over the row's coefficient list.
    row_slots: Vec<Vec<usize>>,
    symbolic: SymbolicLlt<usize>,
}

impl HessianPattern {
    pub fn new(n: usize, rows: &[&LinearRow]) -> Result<Self, SolverError> {
        let mut cols: Vec<Vec<usize>> = (0..n).map(|j| vec![j]).collect();
        for row in rows {
            for (p, &(jp, _)) in row.coeffs.iter().enumerate() {
                for &(jq, _) in &row.coeffs[p..] {
                    let (lo, hi) = if jp <= jq { (jp, jq) } else { (jq, jp) };
                    cols[lo].push(hi);
                }
            }
        }
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0);
        for c in &mut cols {
            c.sort_unstable();
            c.dedup();
            row_idx.extend_from_slice(c);
            col_ptr.push(row_idx.len());
        }
        let find = |col: usize, row: usize| -> usize {
            let seg = &row_idx[col_ptr[col]..col_ptr[col + 1]];
            col_ptr[col] + seg.binary_search(&row).expect("pattern entry")
        };
        let diag = (0..n).map(|j| find(j, j)).collect();
        let row_slots = rows
            .iter()
            .map(|row| {
                let mut slots = Vec::with_capacity(row.coeffs.len() * (row.coeffs.len() + 1) / 2);
                for (p, &(jp, _)) in row.coeffs.iter().enumerate() {
                    for &(jq, _) in &row.coeffs[p..] {
                        let (lo, hi) = if jp <= jq { (jp, jq) } else { (jq, jp) };
                        slots.push(find(lo, hi));
                    }
                }
                slots
            })
            .collect();
        let sym = SymbolicSparseColMatRef::new_checked(n, n, &col_ptr, None, &row_idx);
        let symbolic = SymbolicLlt::try_new(sym, Side::Lower)
            .map_err(|e| SolverError::Numerical(format!("symbolic factorization failed: {e:?}")))?;
        Ok(HessianPattern { n, col_ptr, row_idx, diag, row_slots, symbolic })
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    pub fn diag_slot(&self, j: usize) -> usize {
        self.diag[j]
    }

    pub fn row_slots(&self, r: usize) -> &[usize] {
        &self.row_slots[r]
    }

    /// `y = H v` for a symmetric matrix stored by its lower triangle.
    pub fn multiply(&self, values: &[f64], v: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for col in 0..self.n {
            for p in self.col_ptr[col]..self.col_ptr[col + 1] {
                let row = self.row_idx[p];
                y[row] += values[p] * v[col];
                if row != col {
                    y[col] += values[p] * v[row];
                }
            }
        }
        y
    }

    /// Cholesky factor, shifting the diagonal up when roundoff breaks definiteness.
    pub fn factor(&self, values: &mut [f64]) -> Result<HessianFactor, SolverError> {
        let scale = self.diag.iter().map(|&p| values[p].abs()).fold(0.0, f64::max).max(1e-300);
        let mut shift = 0.0;
        for attempt in 0..8 {
            if attempt > 0 {
                let next = scale * 1e-14 * 100f64.powi(attempt - 1);
                for &p in &self.diag {
                    values[p] += next - shift;
                }
                shift = next;
            }
            let sym = SymbolicSparseColMatRef::new_checked(self.n, self.n, &self.col_ptr, None, &self.row_idx);
            let mat = SparseColMatRef::new(sym, values);
            if let Ok(llt) = Llt::try_new_with_symbolic(self.symbolic.clone(), mat, Side::Lower) {
                return Ok(HessianFactor { llt, n: self.n });
            }
        }
        Err(SolverError::Numerical("Newton matrix is not positive definite".into()))
    }
}

pub(crate) struct HessianFactor {
    llt: Llt<usize, f64>,
    n: usize,
}

impl HessianFactor {
    /// Solves `H X = B` for the columns of `rhs`.
    pub fn solve_columns(&self, rhs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let k = rhs.len();
        let mut m = Mat::from_fn(self.n, k, |i, j| rhs[j][i]);
        self.llt.solve_in_place(m.as_mut());
        (0..k).map(|j| (0..self.n).map(|i| m[(i, j)]).collect()).collect()
    }
}

/// Full-KKT path for many equality rows: the quasi-definite matrix
/// `[H Aᵀ; A −Δ]` factored as `L D Lᵀ` under a fill-reducing ordering.
///
/// `Δ` is a tiny per-row regularization, relative to each row's diagonal
/// Schur estimate `Σ a_j² / H_jj`; callers refine against the exact system.
pub(crate) struct KktSystem {
    n: usize,
    dim: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    /// Hessian slot → KKT slot (both lower triangles).
    h_map: Vec<usize>,
    /// Equality coefficient → (KKT slot, column, value), row-major over the rows.
    a_map: Vec<(usize, usize, f64)>,
    /// Equality row → (diagonal slot, first `a_map` entry, entry count).
    rows: Vec<(usize, usize, usize)>,
    h_diag: Vec<usize>,
    signs: Vec<i8>,
    symbolic: SymbolicCholesky<usize>,
}

/// Relative size of the dual regularization.
const KKT_REGULARIZATION: f64 = 1e-12;

impl KktSystem {
    pub fn new(h: &HessianPattern, eq: &[&LinearRow]) -> Result<Self, SolverError> {
        let n = h.n;
        let dim = n + eq.len();
        let mut cols: Vec<Vec<usize>> = vec![Vec::new(); dim];
        for col in 0..n {
            for p in h.col_ptr[col]..h.col_ptr[col + 1] {
                cols[col].push(h.row_idx[p]);
            }
        }
        for (e, row) in eq.iter().enumerate() {
            for &(j, _) in &row.coeffs {
                cols[j].push(n + e);
            }
            cols[n + e].push(n + e);
        }
        let mut col_ptr = vec![0];
        let mut row_idx = Vec::new();
        for c in &mut cols {
            c.sort_unstable();
            c.dedup();
            row_idx.extend_from_slice(c);
            col_ptr.push(row_idx.len());
        }
        let find = |col: usize, row: usize| -> usize {
            let seg = &row_idx[col_ptr[col]..col_ptr[col + 1]];
            col_ptr[col] + seg.binary_search(&row).expect("kkt entry")
        };
        let mut h_map = vec![0; h.nnz()];
        for col in 0..n {
            for p in h.col_ptr[col]..h.col_ptr[col + 1] {
                h_map[p] = find(col, h.row_idx[p]);
            }
        }
        let mut a_map = Vec::new();
        let mut rows = Vec::with_capacity(eq.len());
        for (e, row) in eq.iter().enumerate() {
            rows.push((find(n + e, n + e), a_map.len(), row.coeffs.len()));
            for &(j, a) in &row.coeffs {
                a_map.push((find(j, n + e), j, a));
            }
        }
        let signs = (0..dim).map(|i| if i < n { 1 } else { -1 }).collect();
        let sym = SymbolicSparseColMatRef::new_checked(dim, dim, &col_ptr, None, &row_idx);
        let symbolic = factorize_symbolic_cholesky(sym, Side::Lower, SymmetricOrdering::Amd, Default::default())
            .map_err(|e| SolverError::Numerical(format!("symbolic KKT factorization failed: {e:?}")))?;
        Ok(KktSystem { n, dim, col_ptr, row_idx, h_map, a_map, rows, h_diag: h.diag.clone(), signs, symbolic })
    }

    /// Factors the regularized KKT matrix for the Hessian values `h_values`.
    pub fn factor(&self, h_values: &[f64]) -> Result<KktFactor<'_>, SolverError> {
        let mut values = vec![0.0; self.row_idx.len()];
        for (p, &slot) in self.h_map.iter().enumerate() {
            values[slot] = h_values[p];
        }
        for &(slot, _, a) in &self.a_map {
            values[slot] = a;
        }
        let h_scale = self.h_diag.iter().map(|&p| h_values[p].abs()).fold(0.0, f64::max);
        for &(diag, first, count) in &self.rows {
            let schur: f64 = self.a_map[first..first + count]
                .iter()
                .map(|&(_, j, a)| a * a / h_values[self.h_diag[j]].abs().max(f64::MIN_POSITIVE))
                .sum();
            values[diag] = -KKT_REGULARIZATION * schur.max(f64::MIN_POSITIVE);
        }
        let sym = SymbolicSparseColMatRef::new_checked(self.dim, self.dim, &self.col_ptr, None, &self.row_idx);
        let mat = SparseColMatRef::new(sym, &values);

        let par = Par::Seq;
        let mut l_values = vec![0.0; self.symbolic.len_val()];
        let mut mem = MemBuffer::new(self.symbolic.factorize_numeric_ldlt_scratch::<f64>(par, Default::default()));
        let regularization = LdltRegularization {
            dynamic_regularization_signs: Some(&self.signs),
            dynamic_regularization_delta: f64::EPSILON * h_scale.max(1.0),
            dynamic_regularization_epsilon: f64::MIN_POSITIVE,
        };
        self.symbolic
            .factorize_numeric_ldlt(
                &mut l_values,
                mat,
                Side::Lower,
                regularization,
                par,
                MemStack::new(&mut mem),
                Default::default(),
            )
            .map_err(|e| SolverError::Numerical(format!("KKT factorization failed: {e:?}")))?;
        Ok(KktFactor { system: self, l_values })
    }
}

pub(crate) struct KktFactor<'a> {
    system: &'a KktSystem,
    l_values: Vec<f64>,
}

impl KktFactor<'_> {
    /// Solves the regularized `[H Aᵀ; A −Δ] [dx; w] = [top; bottom]`, an
    /// approximation of the same system with a zero lower-right block.
    pub fn solve(&self, top: &[f64], bottom: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.system.n;
        let mut rhs = Mat::from_fn(self.system.dim, 1, |i, _| if i < n { top[i] } else { bottom[i - n] });
        let ldlt = LdltRef::new(&self.system.symbolic, &self.l_values);
        let mut mem = MemBuffer::new(self.system.symbolic.solve_in_place_scratch::<f64>(1, Par::Seq));
        ldlt.solve_in_place_with_conj(Conj::No, rhs.as_mut(), Par::Seq, MemStack::new(&mut mem));
        let dx = (0..n).map(|i| rhs[(i, 0)]).collect();
        let w = (n..self.system.dim).map(|i| rhs[(i, 0)]).collect();
        (dx, w)
    }
}

/// In-place dense Cholesky of a small SPD matrix (row-major `m × m`).
pub(crate) fn dense_cholesky(a: &mut [f64], m: usize) -> Result<(), SolverError> {
    for j in 0..m {
        let mut d = a[j * m + j];
        for k in 0..j {
            d -= a[j * m + k] * a[j * m + k];
        }
        if !(d > 0.0) {
            return Err(SolverError::Numerical(format!(
                "equality system is singular at row {j}; rows may be linearly dependent"
            )));
        }
        let d = d.sqrt();
        a[j * m + j] = d;
        for i in j + 1..m {
            let mut s = a[i * m + j];
            for k in 0..j {
                s -= a[i * m + k] * a[j * m + k];
            }
            a[i * m + j] = s / d;
        }
    }
    Ok(())
}

pub(crate) fn dense_cholesky_solve(l: &[f64], m: usize, b: &mut [f64]) {
    for i in 0..m {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * m + k] * b[k];
        }
        b[i] = s / l[i * m + i];
    }
    for i in (0..m).rev() {
        let mut s = b[i];
        for k in i + 1..m {
            s -= l[k * m + i] * b[k];
        }
        b[i] = s / l[i * m + i];
    }
}

/// Minimum-norm correction `x + Aᵀ y` with `A (x + Aᵀ y) = b`.
pub(crate) fn project_onto_equalities(rows: &[&LinearRow], x: &mut [f64]) -> Result<(), SolverError> {
    let m = rows.len();
    if m == 0 {
        return Ok(());
    }
    let mut by_var: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
    for (e, row) in rows.iter().enumerate() {
        for &(j, a) in &row.coeffs {
            by_var.entry(j).or_default().push((e, a));
        }
    }
    let mut gram: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for entries in by_var.values() {
        for &(e1, a1) in entries {
            for &(e2, a2) in entries {
                if e1 >= e2 {
                    *gram.entry((e2, e1)).or_insert(0.0) += a1 * a2;
                }
            }
        }
    }
    let triplets: Vec<Triplet<usize, usize, f64>> =
        gram.iter().map(|(&(c, r), &v)| Triplet::new(r, c, v)).collect();
    let mat = SparseColMat::<usize, f64>::try_new_from_triplets(m, m, &triplets)
        .map_err(|e| SolverError::Malformed(format!("equality system: {e:?}")))?;
    let llt = mat
        .sp_cholesky(Side::Lower)
        .map_err(|_| SolverError::Malformed("equality rows are linearly dependent or empty".into()))?;
    // two passes of refinement keep the residual at roundoff level
    for _ in 0..2 {
        let mut r = Mat::from_fn(m, 1, |e, _| rows[e].rhs - rows[e].dot(x));
        llt.solve_in_place(r.as_mut());
        for (e, row) in rows.iter().enumerate() {
            for &(j, a) in &row.coeffs {
                x[j] += a * r[(e, 0)];
            }
        }
    }
    Ok(())
}
