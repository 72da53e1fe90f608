//! Small symmetric tensors and the deviatoric-ball projection.
//!
//! `SymMat` stores only the upper triangle of a symmetric `d x d` matrix with
//! `d` in `{2, 3}`. The Frobenius inner product is the full-matrix double
//! contraction, so every off-diagonal entry contributes twice:
//!
//! ```text
//! (A, B) = sum_ij A_ij B_ij = sum_i A_ii B_ii + 2 sum_{i<j} A_ij B_ij
//! ```
//!
//! Forgetting the factor two is the classic Voigt-notation bug; all norms in
//! this crate go through [`SymMat::dot`].

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("unsupported tensor dimension {0} (expected 2 or 3)")]
    UnsupportedDim(usize),
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("radius must be nonnegative and finite, got {0}")]
    NegativeRadius(f64),
    #[error("expected {expected} entries, got {got}")]
    WrongLength { expected: usize, got: usize },
}

/// Packed offsets of the upper triangle, row major.
const IDX2: [[usize; 3]; 3] = [[0, 1, 0], [1, 2, 0], [0, 0, 0]];
const IDX3: [[usize; 3]; 3] = [[0, 1, 2], [1, 3, 4], [2, 4, 5]];

/// A symmetric `d x d` matrix, `d` in `{2, 3}`.
#[derive(Clone, Copy, PartialEq)]
pub struct SymMat {
    dim: u8,
    e: [f64; 6],
}

impl SymMat {
    fn check_dim(dim: usize) -> Result<(), TensorError> {
        match dim {
            2 | 3 => Ok(()),
            d => Err(TensorError::UnsupportedDim(d)),
        }
    }

    /// Zero matrix. Panics on `dim` outside `{2, 3}`.
    pub fn zeros(dim: usize) -> Self {
        Self::check_dim(dim).expect("SymMat dimension");
        Self { dim: dim as u8, e: [0.0; 6] }
    }

    /// The identity `E_d`.
    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Diagonal matrix; the dimension is `diag.len()`.
    pub fn diag(diag: &[f64]) -> Result<Self, TensorError> {
        Self::check_dim(diag.len())?;
        let mut m = Self::zeros(diag.len());
        for (i, &x) in diag.iter().enumerate() {
            m.set(i, i, x);
        }
        Ok(m)
    }

    /// 2x2 matrix `[[xx, xy], [xy, yy]]`.
    pub fn new2(xx: f64, xy: f64, yy: f64) -> Self {
        Self { dim: 2, e: [xx, xy, yy, 0.0, 0.0, 0.0] }
    }

    /// Builds from the packed upper triangle (`d(d+1)/2` entries, row major).
    pub fn from_upper(dim: usize, upper: &[f64]) -> Result<Self, TensorError> {
        Self::check_dim(dim)?;
        let expected = dim * (dim + 1) / 2;
        if upper.len() != expected {
            return Err(TensorError::WrongLength { expected, got: upper.len() });
        }
        let mut e = [0.0; 6];
        e[..expected].copy_from_slice(upper);
        Ok(Self { dim: dim as u8, e })
    }

    /// Builds from full rows; only the upper triangle is read.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, TensorError> {
        let dim = rows.len();
        Self::check_dim(dim)?;
        let mut m = Self::zeros(dim);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(TensorError::WrongLength { expected: dim, got: row.len() });
            }
            for (j, &x) in row.iter().enumerate().skip(i) {
                m.set(i, j, x);
            }
        }
        Ok(m)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        if self.dim == 2 {
            IDX2[i][j]
        } else {
            IDX3[i][j]
        }
    }

    #[inline]
    fn len(&self) -> usize {
        if self.dim == 2 {
            3
        } else {
            6
        }
    }

    /// Packed upper-triangle entries.
    pub fn upper(&self) -> &[f64] {
        &self.e[..self.len()]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        assert!(i < self.dim() && j < self.dim(), "index ({i},{j}) out of range");
        self.e[self.slot(i, j)]
    }

    /// Sets entry `(i, j)` and, by symmetry, `(j, i)`.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        assert!(i < self.dim() && j < self.dim(), "index ({i},{j}) out of range");
        let k = self.slot(i, j);
        self.e[k] = value;
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.get(i, i)).sum()
    }

    /// `A - (tr A / d) E_d`.
    pub fn deviator(&self) -> Self {
        let mean = self.trace() / self.dim() as f64;
        let mut out = *self;
        for i in 0..self.dim() {
            let k = self.slot(i, i);
            out.e[k] -= mean;
        }
        out
    }

    /// `(tr A / d) E_d`.
    pub fn spherical(&self) -> Self {
        Self::identity(self.dim()) * (self.trace() / self.dim() as f64)
    }

    /// Frobenius inner product, off-diagonals counted twice.
    ///
    /// Panics when dimensions differ; see [`SymMat::try_dot`].
    #[inline]
    pub fn dot(&self, other: &Self) -> f64 {
        assert_eq!(self.dim, other.dim, "SymMat dimension mismatch");
        if self.dim == 2 {
            self.e[0] * other.e[0] + 2.0 * self.e[1] * other.e[1] + self.e[2] * other.e[2]
        } else {
            self.e[0] * other.e[0]
                + self.e[3] * other.e[3]
                + self.e[5] * other.e[5]
                + 2.0 * (self.e[1] * other.e[1] + self.e[2] * other.e[2] + self.e[4] * other.e[4])
        }
    }

    pub fn try_dot(&self, other: &Self) -> Result<f64, TensorError> {
        if self.dim != other.dim {
            return Err(TensorError::DimensionMismatch { left: self.dim(), right: other.dim() });
        }
        Ok(self.dot(other))
    }

    #[inline]
    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.upper().iter().all(|x| x.is_finite())
    }

    /// Dense row-major copy.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim()).map(|i| (0..self.dim()).map(|j| self.get(i, j)).collect()).collect()
    }
}

impl fmt::Debug for SymMat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SymMat{:?}", self.to_rows())
    }
}

impl Add for SymMat {
    type Output = SymMat;
    fn add(mut self, rhs: SymMat) -> SymMat {
        self += rhs;
        self
    }
}

impl AddAssign for SymMat {
    fn add_assign(&mut self, rhs: SymMat) {
        assert_eq!(self.dim, rhs.dim, "SymMat dimension mismatch");
        for (a, b) in self.e.iter_mut().zip(rhs.e) {
            *a += b;
        }
    }
}

impl Sub for SymMat {
    type Output = SymMat;
    fn sub(mut self, rhs: SymMat) -> SymMat {
        self -= rhs;
        self
    }
}

impl SubAssign for SymMat {
    fn sub_assign(&mut self, rhs: SymMat) {
        assert_eq!(self.dim, rhs.dim, "SymMat dimension mismatch");
        for (a, b) in self.e.iter_mut().zip(rhs.e) {
            *a -= b;
        }
    }
}

impl Mul<f64> for SymMat {
    type Output = SymMat;
    fn mul(mut self, s: f64) -> SymMat {
        for a in self.e.iter_mut() {
            *a *= s;
        }
        self
    }
}

impl Mul<SymMat> for f64 {
    type Output = SymMat;
    fn mul(self, m: SymMat) -> SymMat {
        m * self
    }
}

impl Neg for SymMat {
    type Output = SymMat;
    fn neg(self) -> SymMat {
        self * -1.0
    }
}

/// The radial cutoff `Phi`: identity inside the unit ball, normalization outside.
pub fn phi_cap(a: &SymMat) -> SymMat {
    let n = a.norm();
    if n <= 1.0 {
        *a
    } else {
        *a * (1.0 / n)
    }
}

/// Projection onto `K_R = { s : |s^D| <= R }`.
///
/// Evaluated as `spherical(A) + R * dev(A) / |dev(A)|` when `|dev(A)| > R` and
/// `A` otherwise. This is `(tr A / d) E_d + R Phi(A^D / R)` without dividing by
/// a possibly tiny `R`; for `R = 0` it collapses to the spherical part.
pub fn proj_dev_ball(a: &SymMat, radius: f64) -> Result<SymMat, TensorError> {
    if !(radius >= 0.0) || !radius.is_finite() {
        return Err(TensorError::NegativeRadius(radius));
    }
    let dev = a.deviator();
    let n = dev.norm();
    if n <= radius {
        Ok(*a)
    } else {
        Ok(a.spherical() + dev * (radius / n))
    }
}

/// Projection onto the shifted set `{ s : |(s + p)^D| <= g }`, i.e.
/// `P_g(s + p) - p`.
pub fn project_constraint(sigma: &SymMat, p: &SymMat, g: f64) -> Result<SymMat, TensorError> {
    if !(g >= 0.0) || !g.is_finite() {
        return Err(TensorError::NegativeRadius(g));
    }
    let shifted = *sigma + *p;
    if shifted.deviator().norm() <= g {
        return Ok(*sigma);
    }
    Ok(proj_dev_ball(&shifted, g)? - *p)
}

/// `|(sigma + p)^D| <= g + tol`.
pub fn membership(sigma: &SymMat, p: &SymMat, g: f64, tol: f64) -> bool {
    (*sigma + *p).deviator().norm() <= g + tol
}

/// Yield slack `g - |(sigma + p)^D|`; negative means infeasible.
pub fn yield_slack(sigma: &SymMat, p: &SymMat, g: f64) -> f64 {
    g - (*sigma + *p).deviator().norm()
}
