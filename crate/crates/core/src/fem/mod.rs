//! P1 velocity / P0 stress discretization on triangle meshes.
//!
//! Velocities are continuous piecewise-linear vector fields vanishing on
//! `Gamma1`; stresses are one symmetric 2x2 tensor per triangle. Since the
//! symmetric gradient of a P1 field is element-wise constant, the stress
//! update and its pointwise projection are exact per element.

mod mesh;
pub mod vtk;

pub use mesh::{build_rect_mesh, BoundaryEdge, BoundaryTag, Mesh2D, Side, SideSet};

use thiserror::Error;

use crate::linalg::{self, cg_solve, LinalgError, SparseSym, TripletBuilder};
use crate::tensor::SymMat;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FemError {
    #[error("mesh needs nx, ny >= 1 (got {nx} x {ny})")]
    BadMeshSize { nx: usize, ny: usize },
    #[error("domain extents must be positive (got {lx} x {ly})")]
    BadExtent { lx: f64, ly: f64 },
    #[error("Dirichlet boundary Gamma1 is empty")]
    EmptyGamma1,
    #[error("unknown side '{0}' (expected left, right, bottom or top)")]
    UnknownSide(String),
    #[error("element {element} references a missing node")]
    BadNodeIndex { element: usize },
    #[error("element {element} has non-positive signed area {area:e}")]
    NonPositiveArea { element: usize, area: f64 },
    #[error("invalid boundary: {0}")]
    BadBoundary(String),
    #[error("field has {got} entries, mesh expects {expected}")]
    FieldSize { expected: usize, got: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Nodal P1 velocity, two interleaved components per node.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityField(pub Vec<f64>);

impl VelocityField {
    pub fn zeros(mesh: &Mesh2D) -> Self {
        Self(vec![0.0; mesh.n_dofs()])
    }

    /// Nodal interpolant of `f`, zeroed on `Gamma1`.
    pub fn interpolate(mesh: &Mesh2D, f: impl Fn([f64; 2]) -> [f64; 2]) -> Self {
        let mut v = Vec::with_capacity(mesh.n_dofs());
        for (i, &x) in mesh.nodes().iter().enumerate() {
            if mesh.node_on_gamma1(i) {
                v.extend([0.0, 0.0]);
            } else {
                v.extend(f(x));
            }
        }
        Self(v)
    }

    /// Nodal interpolant of `f` ignoring the boundary condition.
    pub fn interpolate_free(mesh: &Mesh2D, f: impl Fn([f64; 2]) -> [f64; 2]) -> Self {
        Self(mesh.nodes().iter().flat_map(|&x| f(x)).collect())
    }

    pub fn node(&self, i: usize) -> [f64; 2] {
        [self.0[2 * i], self.0[2 * i + 1]]
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self(self.0.iter().map(|v| v * s).collect())
    }

    pub fn axpy(&self, a: f64, other: &VelocityField) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(x, y)| x + a * y).collect())
    }

    pub fn lerp(&self, other: &VelocityField, theta: f64) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(x, y)| (1.0 - theta) * x + theta * y).collect())
    }
}

/// Element-wise constant symmetric stress.
#[derive(Clone, Debug, PartialEq)]
pub struct StressField(pub Vec<SymMat>);

impl StressField {
    pub fn zeros(n: usize, dim: usize) -> Self {
        Self(vec![SymMat::zeros(dim); n])
    }

    pub fn uniform(n: usize, value: SymMat) -> Self {
        Self(vec![value; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[SymMat] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(SymMat::is_finite)
    }

    pub fn add(&self, other: &StressField) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(a, b)| *a + *b).collect())
    }

    pub fn sub(&self, other: &StressField) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(a, b)| *a - *b).collect())
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self(self.0.iter().map(|a| *a * s).collect())
    }

    pub fn axpy(&self, a: f64, other: &StressField) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(x, y)| *x + *y * a).collect())
    }

    pub fn lerp(&self, other: &StressField, theta: f64) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(x, y)| *x * (1.0 - theta) + *y * theta).collect())
    }
}

/// `E(phi)` for the basis function of local node `k`, component `c`.
fn basis_strain(grad: [f64; 2], c: usize) -> SymMat {
    if c == 0 {
        SymMat::new2(grad[0], 0.5 * grad[1], 0.0)
    } else {
        SymMat::new2(0.0, 0.5 * grad[0], grad[1])
    }
}

/// Assembled operators on one mesh.
#[derive(Clone, Debug)]
pub struct FemSpace {
    mesh: Mesh2D,
    mass: SparseSym,
    strain_stiffness: SparseSym,
    grad_gram: SparseSym,
    /// `M + G` with Dirichlet rows eliminated; Riesz map of the V-norm.
    riesz: SparseSym,
    constrained: Vec<bool>,
    /// `basis[e][2k + c] = E(phi_{k,c})` on element `e`.
    basis: Vec<[SymMat; 6]>,
}

/// Solver settings for Riesz-map and eigen-estimate solves.
const AUX_CG_TOL: f64 = 1e-12;

impl FemSpace {
    pub fn new(mesh: Mesh2D) -> Self {
        let basis: Vec<[SymMat; 6]> = (0..mesh.n_elements())
            .map(|e| {
                let g = mesh.grads(e);
                std::array::from_fn(|i| basis_strain(g[i / 2], i % 2))
            })
            .collect();
        let mass = assemble_mass(&mesh);
        let strain_stiffness = assemble_strain_stiffness_with(&mesh, &basis);
        let grad_gram = assemble_gradient_gram(&mesh);
        let constrained = mesh.constrained_dofs();
        let mut riesz = mass.linear_combination(1.0, &grad_gram, 1.0);
        riesz.constrain(&constrained);
        Self { mesh, mass, strain_stiffness, grad_gram, riesz, constrained, basis }
    }

    pub fn mesh(&self) -> &Mesh2D {
        &self.mesh
    }

    pub fn mass(&self) -> &SparseSym {
        &self.mass
    }

    pub fn strain_stiffness(&self) -> &SparseSym {
        &self.strain_stiffness
    }

    pub fn grad_gram(&self) -> &SparseSym {
        &self.grad_gram
    }

    pub fn constrained(&self) -> &[bool] {
        &self.constrained
    }

    fn check_velocity(&self, v: &VelocityField) -> Result<(), FemError> {
        if v.0.len() != self.mesh.n_dofs() {
            return Err(FemError::FieldSize { expected: self.mesh.n_dofs(), got: v.0.len() });
        }
        Ok(())
    }

    fn check_stress(&self, s: &StressField) -> Result<(), FemError> {
        if s.len() != self.mesh.n_elements() {
            return Err(FemError::FieldSize { expected: self.mesh.n_elements(), got: s.len() });
        }
        Ok(())
    }

    /// Element-wise symmetric gradient of a P1 field.
    pub fn strain_of(&self, v: &VelocityField) -> Result<StressField, FemError> {
        self.check_velocity(v)?;
        let out = self
            .mesh
            .triangles()
            .iter()
            .zip(&self.basis)
            .map(|(tri, basis)| {
                let mut s = SymMat::zeros(2);
                for (k, &node) in tri.iter().enumerate() {
                    s += basis[2 * k] * v.0[2 * node] + basis[2 * k + 1] * v.0[2 * node + 1];
                }
                s
            })
            .collect();
        Ok(StressField(out))
    }

    /// Load vector `(sigma, E(phi_i))_H`.
    pub fn stress_load(&self, sigma: &StressField) -> Result<Vec<f64>, FemError> {
        self.check_stress(sigma)?;
        let mut out = vec![0.0; self.mesh.n_dofs()];
        for (e, tri) in self.mesh.triangles().iter().enumerate() {
            let area = self.mesh.areas()[e];
            for (k, &node) in tri.iter().enumerate() {
                out[2 * node] += area * sigma.0[e].dot(&self.basis[e][2 * k]);
                out[2 * node + 1] += area * sigma.0[e].dot(&self.basis[e][2 * k + 1]);
            }
        }
        Ok(out)
    }

    /// `(f, phi_i)` with one-point centroid quadrature; `f` holds one value per element.
    pub fn body_load(&self, f: &[[f64; 2]]) -> Result<Vec<f64>, FemError> {
        if f.len() != self.mesh.n_elements() {
            return Err(FemError::FieldSize { expected: self.mesh.n_elements(), got: f.len() });
        }
        let mut out = vec![0.0; self.mesh.n_dofs()];
        for (e, tri) in self.mesh.triangles().iter().enumerate() {
            let w = self.mesh.areas()[e] / 3.0;
            for &node in tri {
                out[2 * node] += w * f[e][0];
                out[2 * node + 1] += w * f[e][1];
            }
        }
        Ok(out)
    }

    /// `(a, b)_H = sum_e |T_e| a_e : b_e`.
    pub fn stress_dot(&self, a: &StressField, b: &StressField) -> f64 {
        a.0.iter().zip(&b.0).zip(self.mesh.areas()).map(|((x, y), w)| w * x.dot(y)).sum()
    }

    pub fn stress_l2(&self, s: &StressField) -> f64 {
        self.stress_dot(s, s).sqrt()
    }

    pub fn velocity_dot(&self, a: &VelocityField, b: &VelocityField) -> f64 {
        let ma = self.mass.spmv(&a.0).expect("velocity size");
        linalg::dot(&ma, &b.0)
    }

    pub fn velocity_l2(&self, v: &VelocityField) -> f64 {
        self.velocity_dot(v, v).max(0.0).sqrt()
    }

    /// Full H1 norm `sqrt(v^T (M + G) v)`.
    pub fn velocity_v(&self, v: &VelocityField) -> f64 {
        let m = self.mass.quad_form(&v.0).expect("velocity size");
        let g = self.grad_gram.quad_form(&v.0).expect("velocity size");
        (m + g).max(0.0).sqrt()
    }

    /// Dual norm `sup_{phi in V_h} <r, phi> / |phi|_V = sqrt(r^T A^-1 r)` of a
    /// functional given by its values on the basis.
    pub fn dual_norm(&self, r: &[f64]) -> Result<f64, FemError> {
        if r.len() != self.mesh.n_dofs() {
            return Err(FemError::FieldSize { expected: self.mesh.n_dofs(), got: r.len() });
        }
        let rr: Vec<f64> = r.iter().zip(&self.constrained).map(|(&x, &c)| if c { 0.0 } else { x }).collect();
        let sol = cg_solve(&self.riesz, &rr, AUX_CG_TOL, 20 * rr.len().max(10))?;
        Ok(linalg::dot(&sol.x, &rr).max(0.0).sqrt())
    }

    /// `V*` norm of a velocity-like field via its `H` representative `M v`.
    pub fn velocity_dual(&self, v: &VelocityField) -> Result<f64, FemError> {
        let mv = self.mass.spmv(&v.0)?;
        self.dual_norm(&mv)
    }

    /// Largest ratio `|phi|_V / |E(phi)|_H` over the discrete space, by inverse
    /// iteration on `K u = lambda^-1 (M + G) u`. Converges from below.
    pub fn korn_constant(&self, iterations: usize) -> Result<f64, FemError> {
        let mut k = self.strain_stiffness.clone();
        k.constrain(&self.constrained);
        let gram = self.mass.linear_combination(1.0, &self.grad_gram, 1.0);
        let n = self.mesh.n_dofs();
        let mut u: Vec<f64> = (0..n)
            .map(|i| if self.constrained[i] { 0.0 } else { 1.0 + 0.1 * ((i % 7) as f64) })
            .collect();
        let mut ratio = 0.0;
        for _ in 0..iterations.max(1) {
            let mut rhs = gram.spmv(&u)?;
            for (x, &c) in rhs.iter_mut().zip(&self.constrained) {
                if c {
                    *x = 0.0;
                }
            }
            let w = cg_solve(&k, &rhs, AUX_CG_TOL, 50 * n)?.x;
            let num = gram.quad_form(&w)?;
            let den = self.strain_stiffness.quad_form(&w)?;
            ratio = num / den;
            let scale = num.sqrt();
            u = w.into_iter().map(|x| x / scale).collect();
        }
        Ok(ratio.sqrt())
    }
}

/// Consistent P1 mass matrix, block-diagonal in the velocity components.
pub fn assemble_mass(mesh: &Mesh2D) -> SparseSym {
    let mut b = TripletBuilder::new(mesh.n_dofs());
    for (e, tri) in mesh.triangles().iter().enumerate() {
        let w = mesh.areas()[e] / 12.0;
        for (a, &i) in tri.iter().enumerate() {
            for (bb, &j) in tri.iter().enumerate() {
                let m = if a == bb { 2.0 * w } else { w };
                b.add(2 * i, 2 * j, m);
                b.add(2 * i + 1, 2 * j + 1, m);
            }
        }
    }
    b.build()
}

/// `K_ij = (E(phi_i), E(phi_j))_H`.
pub fn assemble_strain_stiffness(mesh: &Mesh2D) -> SparseSym {
    let basis: Vec<[SymMat; 6]> = (0..mesh.n_elements())
        .map(|e| {
            let g = mesh.grads(e);
            std::array::from_fn(|i| basis_strain(g[i / 2], i % 2))
        })
        .collect();
    assemble_strain_stiffness_with(mesh, &basis)
}

fn assemble_strain_stiffness_with(mesh: &Mesh2D, basis: &[[SymMat; 6]]) -> SparseSym {
    let mut b = TripletBuilder::new(mesh.n_dofs());
    for (e, tri) in mesh.triangles().iter().enumerate() {
        let area = mesh.areas()[e];
        for p in 0..6 {
            for q in 0..6 {
                let v = area * basis[e][p].dot(&basis[e][q]);
                b.add(2 * tri[p / 2] + p % 2, 2 * tri[q / 2] + q % 2, v);
            }
        }
    }
    b.build()
}

/// `G_ij = (grad phi_i, grad phi_j)_H`.
pub fn assemble_gradient_gram(mesh: &Mesh2D) -> SparseSym {
    let mut b = TripletBuilder::new(mesh.n_dofs());
    for (e, tri) in mesh.triangles().iter().enumerate() {
        let area = mesh.areas()[e];
        let g = mesh.grads(e);
        for (a, &i) in tri.iter().enumerate() {
            for (bb, &j) in tri.iter().enumerate() {
                let v = area * (g[a][0] * g[bb][0] + g[a][1] * g[bb][1]);
                b.add(2 * i, 2 * j, v);
                b.add(2 * i + 1, 2 * j + 1, v);
            }
        }
    }
    b.build()
}

/// Eliminates `Gamma1` dofs symmetrically: unit diagonal, zero rhs entry.
pub fn apply_dirichlet(matrix: &SparseSym, rhs: &[f64], mesh: &Mesh2D) -> (SparseSym, Vec<f64>) {
    let mask = mesh.constrained_dofs();
    let mut a = matrix.clone();
    a.constrain(&mask);
    let b = rhs.iter().zip(&mask).map(|(&x, &c)| if c { 0.0 } else { x }).collect();
    (a, b)
}
