//! Sparse symmetric matrices and Jacobi-preconditioned conjugate gradients.

use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: matrix is {rows}x{rows}, vector has length {len}")]
    DimensionMismatch { rows: usize, len: usize },
    #[error("conjugate gradients did not converge: {iterations} iterations, relative residual {residual:e}")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("non-positive diagonal entry {value:e} at row {row}")]
    NonPositiveDiagonal { row: usize, value: f64 },
}

/// Accumulates `(row, col, value)` contributions; duplicates are summed.
#[derive(Clone, Debug, Default)]
pub struct TripletBuilder {
    n: usize,
    entries: BTreeMap<(usize, usize), f64>,
}

impl TripletBuilder {
    pub fn new(n: usize) -> Self {
        Self { n, entries: BTreeMap::new() }
    }

    pub fn add(&mut self, row: usize, col: usize, value: f64) {
        assert!(row < self.n && col < self.n, "entry ({row},{col}) outside {}x{}", self.n, self.n);
        *self.entries.entry((row, col)).or_insert(0.0) += value;
    }

    /// Builds the matrix. The caller is responsible for adding both `(i,j)`
    /// and `(j,i)`; assembly loops over full element matrices do this.
    pub fn build(self) -> SparseSym {
        let mut row_ptr = vec![0usize; self.n + 1];
        let mut col_idx = Vec::with_capacity(self.entries.len());
        let mut values = Vec::with_capacity(self.entries.len());
        for (&(r, c), &v) in &self.entries {
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
        }
        for i in 0..self.n {
            row_ptr[i + 1] += row_ptr[i];
        }
        SparseSym { n: self.n, row_ptr, col_idx, values }
    }
}

/// Compressed sparse row storage of a symmetric matrix (both triangles stored).
#[derive(Clone, Debug, PartialEq)]
pub struct SparseSym {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSym {
    pub fn identity(n: usize) -> Self {
        Self { n, row_ptr: (0..=n).collect(), col_idx: (0..n).collect(), values: vec![1.0; n] }
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let mut b = TripletBuilder::new(n);
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    b.add(i, j, v);
                }
            }
        }
        b.build()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        d
    }

    /// `y = A x`.
    pub fn spmv(&self, x: &[f64]) -> Result<Vec<f64>, LinalgError> {
        let mut y = vec![0.0; self.n];
        self.spmv_into(x, &mut y)?;
        Ok(y)
    }

    pub fn spmv_into(&self, x: &[f64], y: &mut [f64]) -> Result<(), LinalgError> {
        if x.len() != self.n {
            return Err(LinalgError::DimensionMismatch { rows: self.n, len: x.len() });
        }
        if y.len() != self.n {
            return Err(LinalgError::DimensionMismatch { rows: self.n, len: y.len() });
        }
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            *yi = s;
        }
        Ok(())
    }

    /// `x^T A x`.
    pub fn quad_form(&self, x: &[f64]) -> Result<f64, LinalgError> {
        Ok(dot(&self.spmv(x)?, x))
    }

    /// `alpha * self + beta * other`; both must share dimension.
    pub fn linear_combination(&self, alpha: f64, other: &SparseSym, beta: f64) -> SparseSym {
        assert_eq!(self.n, other.n, "matrix dimension mismatch");
        let mut b = TripletBuilder::new(self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                b.add(i, j, alpha * v);
            }
            for (j, v) in other.row(i) {
                b.add(i, j, beta * v);
            }
        }
        b.build()
    }

    /// Symmetric elimination of homogeneous Dirichlet rows: rows and columns
    /// of constrained indices are zeroed and their diagonal set to one.
    pub fn constrain(&mut self, constrained: &[bool]) {
        assert_eq!(constrained.len(), self.n);
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                if constrained[i] || constrained[j] {
                    self.values[k] = if i == j { 1.0 } else { 0.0 };
                }
            }
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CgSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Final relative preconditioned residual `sqrt(r^T D^-1 r) / sqrt(b^T D^-1 b)`,
    /// absolute when `b = 0`.
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub struct CgOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Record the preconditioned residual after every iteration.
    pub record_history: bool,
}

/// Solves `A x = b` with Jacobi-preconditioned CG starting from zero.
pub fn cg_solve(a: &SparseSym, b: &[f64], tol: f64, max_iter: usize) -> Result<CgSolution, LinalgError> {
    let x0 = vec![0.0; a.n()];
    cg_solve_from(a, b, &x0, tol, max_iter)
}

/// As [`cg_solve`] with an initial guess.
pub fn cg_solve_from(a: &SparseSym, b: &[f64], x0: &[f64], tol: f64, max_iter: usize) -> Result<CgSolution, LinalgError> {
    let opts = CgOptions { tol, max_iter, record_history: false };
    pcg(a, b, x0, &opts).map(|(s, _)| s)
}

/// Core PCG loop; also returns the residual history when requested.
pub fn pcg(a: &SparseSym, b: &[f64], x0: &[f64], opts: &CgOptions) -> Result<(CgSolution, Vec<f64>), LinalgError> {
    pcg_with(a, b, x0, opts, |_, _, _| {})
}

/// As [`pcg`], calling `on_iter(k, x_k, residual_k)` after every iteration.
pub fn pcg_with<F>(a: &SparseSym, b: &[f64], x0: &[f64], opts: &CgOptions, mut on_iter: F) -> Result<(CgSolution, Vec<f64>), LinalgError>
where
    F: FnMut(usize, &[f64], f64),
{
    let n = a.n();
    if b.len() != n {
        return Err(LinalgError::DimensionMismatch { rows: n, len: b.len() });
    }
    if x0.len() != n {
        return Err(LinalgError::DimensionMismatch { rows: n, len: x0.len() });
    }
    if !(opts.tol > 0.0) {
        return Err(LinalgError::BadTolerance(opts.tol));
    }
    let inv_diag = a
        .diagonal()
        .into_iter()
        .enumerate()
        .map(|(row, v)| if v > 0.0 { Ok(1.0 / v) } else { Err(LinalgError::NonPositiveDiagonal { row, value: v }) })
        .collect::<Result<Vec<_>, _>>()?;

    let b_norm = b.iter().zip(&inv_diag).map(|(bi, di)| bi * bi * di).sum::<f64>().sqrt();
    let scale = if b_norm > 0.0 { b_norm } else { 1.0 };

    let mut x = x0.to_vec();
    let mut r = a.spmv(&x)?;
    r.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut rz = dot(&r, &z);
    let mut residual = rz.max(0.0).sqrt() / scale;
    let mut history = Vec::new();
    if opts.record_history {
        history.push(residual);
    }
    if residual <= opts.tol || rz == 0.0 {
        return Ok((CgSolution { x, iterations: 0, residual }, history));
    }

    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    for it in 1..=opts.max_iter {
        a.spmv_into(&p, &mut ap)?;
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            // Breakdown: A is not SPD along p, or p vanished in roundoff.
            return Err(LinalgError::NotConverged { iterations: it, residual });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        residual = rz_new.max(0.0).sqrt() / scale;
        if opts.record_history {
            history.push(residual);
        }
        on_iter(it, &x, residual);
        if residual <= opts.tol {
            return Ok((CgSolution { x, iterations: it, residual }, history));
        }
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(LinalgError::NotConverged { iterations: opts.max_iter, residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn two_by_two() -> SparseSym {
        SparseSym::from_dense(&[vec![4.0, 1.0], vec![1.0, 3.0]])
    }

    #[test]
    fn spmv_examples() {
        let x = [1.5, -2.0, 3.0];
        assert_eq!(SparseSym::identity(3).spmv(&x).unwrap(), x.to_vec());
        assert_eq!(two_by_two().spmv(&[1.0, 1.0]).unwrap(), vec![5.0, 4.0]);
        let zero = TripletBuilder::new(3).build();
        assert_eq!(zero.spmv(&x).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn spmv_dimension_mismatch() {
        assert_eq!(
            two_by_two().spmv(&[1.0]).unwrap_err(),
            LinalgError::DimensionMismatch { rows: 2, len: 1 }
        );
    }

    #[test]
    fn builder_sums_duplicates_and_sorts_columns() {
        let mut b = TripletBuilder::new(3);
        b.add(0, 2, 1.0);
        b.add(0, 0, 2.0);
        b.add(0, 2, 0.5);
        b.add(2, 0, 1.5);
        let m = b.build();
        assert_eq!(m.row(0).collect::<Vec<_>>(), vec![(0, 2.0), (2, 1.5)]);
        assert_eq!(m.get(2, 0), 1.5);
        assert_eq!(m.get(1, 1), 0.0);
    }

    #[test]
    fn cg_two_by_two() {
        // [[4,1],[1,3]] x = [1,2]  =>  x = [1/11, 7/11]
        let s = cg_solve(&two_by_two(), &[1.0, 2.0], 1e-14, 10).unwrap();
        assert_abs_diff_eq!(s.x[0], 1.0 / 11.0, epsilon = 1e-10);
        assert_abs_diff_eq!(s.x[1], 7.0 / 11.0, epsilon = 1e-10);
    }

    #[test]
    fn cg_zero_rhs_takes_no_iterations() {
        let s = cg_solve(&two_by_two(), &[0.0, 0.0], 1e-12, 10).unwrap();
        assert_eq!(s.x, vec![0.0, 0.0]);
        assert_eq!(s.iterations, 0);
    }

    #[test]
    fn cg_identity_one_iteration() {
        let b = [1.0, -2.0, 0.25, 4.0];
        let s = cg_solve(&SparseSym::identity(4), &b, 1e-12, 10).unwrap();
        assert_eq!(s.iterations, 1);
        assert_eq!(s.x, b.to_vec());
    }

    #[test]
    fn cg_reports_non_convergence() {
        let a = SparseSym::from_dense(&[vec![1.0, 0.0, 0.0], vec![0.0, 10.0, 0.0], vec![0.0, 0.0, 100.0]]);
        // Jacobi makes this trivial, so use a coupled matrix.
        let a = a.linear_combination(1.0, &SparseSym::from_dense(&[vec![0.0, 0.9, 0.0], vec![0.9, 0.0, 3.0], vec![0.0, 3.0, 0.0]]), 1.0);
        let e = cg_solve(&a, &[1.0, 1.0, 1.0], 1e-14, 1).unwrap_err();
        assert!(matches!(e, LinalgError::NotConverged { iterations: 1, .. }));
    }

    #[test]
    fn cg_rejects_bad_input() {
        assert!(matches!(cg_solve(&two_by_two(), &[1.0, 2.0], 0.0, 5), Err(LinalgError::BadTolerance(_))));
        let singular = SparseSym::from_dense(&[vec![0.0, 1.0], vec![1.0, 1.0]]);
        assert!(matches!(cg_solve(&singular, &[1.0, 2.0], 1e-8, 5), Err(LinalgError::NonPositiveDiagonal { row: 0, .. })));
    }

    #[test]
    fn constrain_keeps_symmetry() {
        let mut a = SparseSym::from_dense(&[vec![2.0, -1.0, 0.0], vec![-1.0, 2.0, -1.0], vec![0.0, -1.0, 2.0]]);
        a.constrain(&[true, false, false]);
        assert_eq!(a.to_dense(), vec![vec![1.0, 0.0, 0.0], vec![0.0, 2.0, -1.0], vec![0.0, -1.0, 2.0]]);
    }

    #[test]
    fn warm_start_at_solution_returns_immediately() {
        let a = two_by_two();
        let x = [1.0 / 11.0, 7.0 / 11.0];
        let s = cg_solve_from(&a, &[1.0, 2.0], &x, 1e-12, 10).unwrap();
        assert_eq!(s.iterations, 0);
    }
}
