//! Isometric coordinates for the von Mises set and brute-force checks built on them.
//!
//! Every `d x d` matrix splits uniquely as `psi1(lambda) + psi2(x)` where
//! `psi1(lambda) = lambda / sqrt(d) * E_d` spans the spherical line and
//!
//! ```text
//! psi2(x) = sum_{i<d} a_i e_i + sum_{i != j} b_ij E_ij,
//! e_i = diag(1, .., 1, -i, 0, .., 0) / sqrt(i (i + 1))     (i ones)
//! ```
//!
//! spans the trace-free matrices. Both maps are isometries, so
//! `K_R = { s : |s^D| <= R }` is the cylinder `{ psi1(lambda) + psi2(x) : |x| <= R }`.
//! Sampling that cylinder gives an oracle for the projection that never calls
//! [`crate::tensor::proj_dev_ball`] on the sampled points.
//!
//! The coordinate vector `x` has `d^2 - 1` entries: first the `d - 1`
//! diagonal coordinates `a_i`, then the off-diagonal `b_ij` in row-major order
//! skipping the diagonal. The chart covers non-symmetric trace-free matrices
//! too; for symmetric input `b_ij == b_ji`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::tensor::{project_constraint, SymMat, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChartError {
    #[error("unsupported dimension {0}")]
    UnsupportedDim(usize),
    #[error("coordinate vector has length {got}, expected {expected}")]
    WrongLength { expected: usize, got: usize },
    #[error("time step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("sample count must be at least 1")]
    NoSamples,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Dense `d x d` matrix, row major. Not necessarily symmetric.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    dim: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, data: vec![0.0; dim * dim] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, ChartError> {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for row in rows {
            if row.len() != dim {
                return Err(ChartError::WrongLength { expected: dim, got: row.len() });
            }
            data.extend_from_slice(row);
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn dot(&self, other: &Mat) -> f64 {
        assert_eq!(self.dim, other.dim, "Mat dimension mismatch");
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn add(&self, other: &Mat) -> Mat {
        assert_eq!(self.dim, other.dim, "Mat dimension mismatch");
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Mat { dim: self.dim, data }
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        assert_eq!(self.dim, other.dim, "Mat dimension mismatch");
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Mat { dim: self.dim, data }
    }

    pub fn scale(&self, s: f64) -> Mat {
        Mat { dim: self.dim, data: self.data.iter().map(|a| a * s).collect() }
    }
}

impl From<&SymMat> for Mat {
    fn from(s: &SymMat) -> Self {
        let d = s.dim();
        let mut m = Mat::zeros(d);
        for i in 0..d {
            for j in 0..d {
                m.set(i, j, s.get(i, j));
            }
        }
        m
    }
}

/// Spherical coordinate `lambda` and deviatoric coordinates `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct DevCoords {
    pub lambda: f64,
    pub x: Vec<f64>,
}

impl DevCoords {
    pub fn x_norm(&self) -> f64 {
        self.x.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

fn check_dim(d: usize) -> Result<(), ChartError> {
    match d {
        2 | 3 => Ok(()),
        _ => Err(ChartError::UnsupportedDim(d)),
    }
}

/// Diagonal of `e_i` (1-based `i`).
fn e_diag(i: usize, d: usize) -> Vec<f64> {
    let s = 1.0 / ((i * (i + 1)) as f64).sqrt();
    (0..d)
        .map(|k| match k.cmp(&i) {
            std::cmp::Ordering::Less => s,
            std::cmp::Ordering::Equal => -(i as f64) * s,
            std::cmp::Ordering::Greater => 0.0,
        })
        .collect()
}

fn off_diagonal_slots(d: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..d).flat_map(move |i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
}

/// `psi1(lambda) = lambda / sqrt(d) * E_d`.
pub fn psi1(lambda: f64, d: usize) -> Result<SymMat, ChartError> {
    check_dim(d)?;
    Ok(SymMat::identity(d) * (lambda / (d as f64).sqrt()))
}

/// `psi2(x) = sum a_i e_i + sum b_ij E_ij`.
pub fn psi2(x: &[f64], d: usize) -> Result<Mat, ChartError> {
    check_dim(d)?;
    let expected = d * d - 1;
    if x.len() != expected {
        return Err(ChartError::WrongLength { expected, got: x.len() });
    }
    let mut m = Mat::zeros(d);
    for (i, &a) in x[..d - 1].iter().enumerate() {
        for (k, e) in e_diag(i + 1, d).into_iter().enumerate() {
            m.data[k * d + k] += a * e;
        }
    }
    for ((i, j), &b) in off_diagonal_slots(d).zip(&x[d - 1..]) {
        m.set(i, j, b);
    }
    Ok(m)
}

/// Inverse of the chart on all of `R^{d x d}`.
pub fn decompose(a: &Mat) -> Result<DevCoords, ChartError> {
    let d = a.dim();
    check_dim(d)?;
    let lambda = a.trace() / (d as f64).sqrt();
    let mut x = Vec::with_capacity(d * d - 1);
    for i in 1..d {
        let e = e_diag(i, d);
        x.push((0..d).map(|k| a.get(k, k) * e[k]).sum());
    }
    x.extend(off_diagonal_slots(d).map(|(i, j)| a.get(i, j)));
    Ok(DevCoords { lambda, x })
}

/// Membership in `K_R` decided through the chart coordinates.
pub fn kr_contains_via_chart(a: &SymMat, radius: f64) -> bool {
    let coords = decompose(&Mat::from(a)).expect("SymMat dims are always 2 or 3");
    coords.x_norm() <= radius
}

/// Uniform sample from the radius-`r` ball in `R^n`.
fn sample_ball<R: Rng>(rng: &mut R, n: usize, r: f64) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let len = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if len > 0.0 {
            let u: f64 = rng.random();
            let scale = r * u.powf(1.0 / n as f64) / len;
            return g.into_iter().map(|v| v * scale).collect();
        }
    }
}

#[derive(Clone, Debug)]
pub struct OracleResult {
    pub best_point: Mat,
    pub best_dist: f64,
}

/// Number of points on the spherical-coordinate grid.
const LAMBDA_GRID: usize = 101;

/// Nearest of `n_samples` chart samples of `K_R` to `f`.
///
/// `lambda` runs over a 101-point grid on
/// `[tr f / sqrt d - 2|f|, tr f / sqrt d + 2|f|]`, visited from the centre
/// outwards in a cycle; `x` is uniform in the radius-`R` ball. Sample 0 is the
/// chart origin `x = 0` at the centre `lambda`. Deterministic for a given seed.
pub fn argmin_oracle(f: &SymMat, radius: f64, n_samples: usize, seed: u64) -> Result<OracleResult, ChartError> {
    if !(radius >= 0.0) {
        return Err(TensorError::NegativeRadius(radius).into());
    }
    if n_samples == 0 {
        return Err(ChartError::NoSamples);
    }
    let d = f.dim();
    let fm = Mat::from(f);
    let centre = f.trace() / (d as f64).sqrt();
    let half = 2.0 * f.norm();
    let grid: Vec<f64> = (0..LAMBDA_GRID)
        .map(|j| centre - half + 2.0 * half * j as f64 / (LAMBDA_GRID - 1) as f64)
        .collect();
    let mid = LAMBDA_GRID / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<OracleResult> = None;
    for k in 0..n_samples {
        let lambda = grid[(mid + k) % LAMBDA_GRID];
        let x = if k == 0 { vec![0.0; d * d - 1] } else { sample_ball(&mut rng, d * d - 1, radius) };
        let tau = psi2(&x, d)?.add(&Mat::from(&psi1(lambda, d)?));
        let dist = tau.sub(&fm).norm();
        if best.as_ref().map_or(true, |b| dist < b.best_dist) {
            best = Some(OracleResult { best_point: tau, best_dist: dist });
        }
    }
    Ok(best.expect("n_samples >= 1"))
}

#[derive(Clone, Debug)]
pub struct InclusionReport {
    /// Stress produced by the projection formula.
    pub sigma_b: SymMat,
    /// Largest `(F - sigma_b, tau - sigma_b)` over the witnesses, clamped at 0.
    pub max_violation: f64,
    pub witnesses: usize,
}

/// Checks that `sigma_b + p = P_g(sigma_a + dt (E(v) + h) + p)` solves the
/// step inclusion, i.e. `(F - sigma_b, tau - sigma_b) <= 0` for sampled
/// `tau` in `K = K_g - p` where `F = sigma_a + dt (E(v) + h)`.
///
/// Witnesses are chart samples of `K_g` shifted by `-p`; a quarter of them sit
/// on the boundary `|x| = g`.
#[allow(clippy::too_many_arguments)]
pub fn inclusion_equivalence_check(
    sigma_a: &SymMat,
    strain: &SymMat,
    h: &SymMat,
    p: &SymMat,
    g: f64,
    dt: f64,
    n_witnesses: usize,
    seed: u64,
) -> Result<InclusionReport, ChartError> {
    if !(dt > 0.0) {
        return Err(ChartError::NonPositiveStep(dt));
    }
    let d = sigma_a.dim();
    let f = *sigma_a + (*strain + *h) * dt;
    let sigma_b = project_constraint(&f, p, g)?;
    let residual = Mat::from(&(f - sigma_b));
    let sb = Mat::from(&sigma_b);
    let pm = Mat::from(p);
    let scale = f.norm() + p.norm() + g + 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_violation = 0.0f64;
    for k in 0..n_witnesses {
        let lambda = rng.random_range(-2.0 * scale..2.0 * scale);
        let mut x = sample_ball(&mut rng, d * d - 1, g);
        if k % 4 == 0 {
            let len = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if len > 0.0 {
                x.iter_mut().for_each(|v| *v *= g / len);
            }
        }
        let tau = psi2(&x, d)?.add(&Mat::from(&psi1(lambda, d)?)).sub(&pm);
        let v = residual.dot(&tau.sub(&sb));
        max_violation = max_violation.max(v);
    }
    Ok(InclusionReport { sigma_b, max_violation, witnesses: n_witnesses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{membership, proj_dev_ball};
    use approx::assert_abs_diff_eq;

    const S2: f64 = std::f64::consts::SQRT_2;

    #[test]
    fn psi1_examples() {
        assert!((psi1(S2, 2).unwrap() - SymMat::identity(2)).norm() < 1e-15);
        assert_eq!(psi1(0.0, 3).unwrap(), SymMat::zeros(3));
        assert!((psi1(3f64.sqrt(), 3).unwrap() - SymMat::identity(3)).norm() < 1e-15);
    }

    #[test]
    fn psi2_examples() {
        let m = psi2(&[S2, 0.0, 0.0], 2).unwrap();
        assert!(m.sub(&Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, -1.0]]).unwrap()).norm() < 1e-15);
        assert_eq!(psi2(&[0.0; 8], 3).unwrap(), Mat::zeros(3));
        let m = psi2(&[0.0, 1.0, 0.0], 2).unwrap();
        assert_eq!(m, Mat::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap());
        assert!(matches!(psi2(&[1.0; 4], 2), Err(ChartError::WrongLength { expected: 3, got: 4 })));
    }

    #[test]
    fn e_basis_is_orthonormal_and_trace_free() {
        let d = 3;
        let e1 = e_diag(1, d);
        let e2 = e_diag(2, d);
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        assert_abs_diff_eq!(dot(&e1, &e1), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(dot(&e2, &e2), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(dot(&e1, &e2), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(e2.iter().sum::<f64>(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn decompose_examples() {
        let c = decompose(&Mat::from(&SymMat::identity(2))).unwrap();
        assert_abs_diff_eq!(c.lambda, S2, epsilon = 1e-15);
        assert!(c.x.iter().all(|v| v.abs() < 1e-15));

        let c = decompose(&Mat::from(&SymMat::new2(1.0, 0.0, -1.0))).unwrap();
        assert_abs_diff_eq!(c.lambda, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.x[0], S2, epsilon = 1e-15);
        assert_eq!(&c.x[1..], &[0.0, 0.0]);

        // diag(3,1) = 2 I + diag(1,-1): lambda = 4/sqrt2, a_1 = sqrt2.
        let c = decompose(&Mat::from(&SymMat::new2(3.0, 0.0, 1.0))).unwrap();
        assert_abs_diff_eq!(c.lambda, 2.0 * S2, epsilon = 1e-14);
        assert_abs_diff_eq!(c.x[0], S2, epsilon = 1e-14);
    }

    #[test]
    fn symmetric_input_has_paired_off_diagonals() {
        let s = SymMat::from_rows(&[vec![1.0, 2.0, 3.0], vec![2.0, 4.0, 5.0], vec![3.0, 5.0, 6.0]]).unwrap();
        let c = decompose(&Mat::from(&s)).unwrap();
        let slots: Vec<_> = off_diagonal_slots(3).collect();
        for (k, &(i, j)) in slots.iter().enumerate() {
            let l = slots.iter().position(|&s| s == (j, i)).unwrap();
            assert_eq!(c.x[2 + k], c.x[2 + l]);
        }
    }

    #[test]
    fn kr_contains_examples() {
        assert!(kr_contains_via_chart(&SymMat::identity(2), 0.0));
        assert!(!kr_contains_via_chart(&SymMat::new2(1.0, 0.0, -1.0), 1.0));
        assert!(kr_contains_via_chart(&SymMat::new2(1.0, 0.0, -1.0), S2 + 1e-15));
        assert!(membership(&SymMat::new2(1.0, 0.0, -1.0), &SymMat::zeros(2), S2, 1e-15));
    }

    #[test]
    fn oracle_identity_is_its_own_nearest_point() {
        for n in [1, 7, 1000] {
            let r = argmin_oracle(&SymMat::identity(2), 1.0, n, 3).unwrap();
            assert!(r.best_dist < 1e-14, "n={n} dist={}", r.best_dist);
        }
    }

    #[test]
    fn oracle_never_beats_projection() {
        let f = SymMat::new2(2.0, 0.0, 0.0);
        let r = argmin_oracle(&f, 1.0, 100_000, 11).unwrap();
        let exact = S2 - 1.0;
        assert_abs_diff_eq!((proj_dev_ball(&f, 1.0).unwrap() - f).norm(), exact, epsilon = 1e-15);
        assert!(r.best_dist >= exact - 1e-6);
        // and the samples do get close
        assert!(r.best_dist < exact + 0.05);
    }

    #[test]
    fn oracle_with_zero_radius_samples_spherical_line() {
        let f = SymMat::new2(2.0, 0.5, -1.0);
        let r = argmin_oracle(&f, 0.0, 500, 5).unwrap();
        let c = decompose(&r.best_point).unwrap();
        assert_eq!(c.x_norm(), 0.0);
        assert!(r.best_dist >= f.deviator().norm() - 1e-12);
    }

    #[test]
    fn oracle_is_deterministic() {
        let f = SymMat::new2(0.3, -1.2, 2.0);
        let a = argmin_oracle(&f, 0.5, 2000, 42).unwrap();
        let b = argmin_oracle(&f, 0.5, 2000, 42).unwrap();
        assert_eq!(a.best_point, b.best_point);
        assert!(argmin_oracle(&f, 0.5, 0, 42).is_err());
    }

    #[test]
    fn inclusion_inactive_constraint_has_zero_violation() {
        let z = SymMat::zeros(2);
        let h = SymMat::new2(1.0, 0.3, -1.0);
        let r = inclusion_equivalence_check(&z, &z, &h, &z, 100.0, 0.1, 500, 1).unwrap();
        assert_eq!(r.max_violation, 0.0);
        assert!((r.sigma_b - h * 0.1).norm() < 1e-15);
    }

    #[test]
    fn inclusion_radial_example() {
        let z = SymMat::zeros(2);
        let h = SymMat::new2(1.0, 0.0, -1.0);
        let r = inclusion_equivalence_check(&z, &z, &h, &z, 1.0, 10.0, 1000, 9).unwrap();
        assert!((r.sigma_b - SymMat::new2(1.0 / S2, 0.0, -1.0 / S2)).norm() < 1e-15);
        assert!(r.max_violation <= 1e-10);
    }

    #[test]
    fn inclusion_spherical_shift_leaves_stress_unchanged() {
        let z = SymMat::zeros(2);
        let h = SymMat::new2(1.0, 0.0, -1.0);
        let p = SymMat::new2(5.0, 0.0, 5.0);
        let a = inclusion_equivalence_check(&z, &z, &h, &z, 1.0, 10.0, 1000, 9).unwrap();
        let b = inclusion_equivalence_check(&z, &z, &h, &p, 1.0, 10.0, 1000, 9).unwrap();
        assert!((a.sigma_b - b.sigma_b).norm() < 1e-13);
        assert!(b.max_violation <= 1e-10);
    }

    #[test]
    fn inclusion_rejects_bad_step() {
        let z = SymMat::zeros(2);
        assert!(matches!(
            inclusion_equivalence_check(&z, &z, &z, &z, 1.0, 0.0, 1, 0),
            Err(ChartError::NonPositiveStep(_))
        ));
    }
}
