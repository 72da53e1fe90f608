//! Time stepping.
//!
//! The projection scheme advances `(v, sigma)` by
//!
//! ```text
//! (M/dt + (nu + dt) K) v_n = M v_{n-1} / dt + F_n - B(sigma_{n-1} + dt h_n)
//! sigma*_n = sigma_{n-1} + dt (E(v_n) + h_n)
//! sigma_n  = P_{g_n}(sigma*_n + p_n) - p_n          (per element)
//! ```
//!
//! where `B` is the stress-load operator and `K = B E`. The first line is the
//! momentum equation with the trial-stress update substituted in, so each step
//! costs one SPD solve and no nonlinear iteration.
//!
//! `Scheme::Implicit` uses the projected stress inside the momentum equation and
//! resolves the coupling by Picard iteration; `Scheme::Explicit` lags the stress
//! by one step. Both keep the same stress update and projection.
//!
//! In pointwise mode the momentum equation is dropped and `E(v)` is a
//! prescribed strain rate, leaving the catch-up iteration of a sweeping process.

mod norms;
mod trajectory;

pub use norms::{
    accumulate_displacement, discrete_norms, energy_check, plastic_strain, EnergyCheck, NormReport,
};
pub use trajectory::{interpolant_eval, FieldKind, FieldValue, Interpolant, Trajectory};

use std::fmt;
use std::ops::{Add, Mul};
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use crate::fem::{apply_dirichlet, build_rect_mesh, FemError, FemSpace, SideSet, StressField, VelocityField};
use crate::linalg::{cg_solve_from, LinalgError, SparseSym};
use crate::tensor::{project_constraint, yield_slack, SymMat, TensorError};

pub type ScalarFn = Arc<dyn Fn(f64, [f64; 2]) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(f64, [f64; 2]) -> [f64; 2] + Send + Sync>;
pub type TensorFn = Arc<dyn Fn(f64, [f64; 2]) -> SymMat + Send + Sync>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StepError {
    #[error("invalid problem: {0}")]
    InvalidSpec(String),
    #[error("initial stress violates the constraint at element {element} (slack {slack:e})")]
    InfeasibleInitialStress { element: usize, slack: f64 },
    #[error("yield bound g = {value} < 0 at t = {t}, element {element}")]
    NegativeYield { t: f64, element: usize, value: f64 },
    #[error("step {step}: linear solve failed: {source}")]
    Solver { step: usize, source: LinalgError },
    #[error("interpolant query t = {t} outside [0, {t_final}]")]
    OutOfRange { t: f64, t_final: f64 },
    #[error("velocity is not defined in pointwise mode")]
    NoVelocity,
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    Projection,
    Implicit,
    Explicit,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Projection => "projection",
            Scheme::Implicit => "implicit",
            Scheme::Explicit => "explicit",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "projection" => Ok(Scheme::Projection),
            "implicit" => Ok(Scheme::Implicit),
            "explicit" => Ok(Scheme::Explicit),
            other => Err(format!("unknown scheme '{other}' (expected projection, implicit or explicit)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeshConfig {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub gamma1: SideSet,
}

#[derive(Clone)]
pub enum Mode {
    Fem(MeshConfig),
    /// Spatially homogeneous sweeping process in `dim` dimensions.
    Pointwise { dim: usize, strain_rate: TensorFn },
}

impl fmt::Debug for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Fem(m) => f.debug_tuple("Fem").field(m).finish(),
            Mode::Pointwise { dim, .. } => f.debug_struct("Pointwise").field("dim", dim).finish_non_exhaustive(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverSettings {
    pub cg_tol: f64,
    pub cg_max_iter: usize,
    pub fp_tol: f64,
    pub fp_max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { cg_tol: 1e-12, cg_max_iter: 20_000, fp_tol: 1e-10, fp_max_iter: 200 }
    }
}

/// Continuous problem data plus the time grid.
///
/// `f` and `h` are averaged over each step, `p` and `g` sampled at `t_n`,
/// all at element centroids (pointwise mode evaluates at the origin).
#[derive(Clone)]
pub struct ProblemSpec {
    pub nu: f64,
    pub t_final: f64,
    pub n_steps: usize,
    pub mode: Mode,
    pub f: VectorFn,
    pub h: TensorFn,
    pub p: TensorFn,
    pub g: ScalarFn,
    /// Initial velocity (time argument ignored); zeroed on `Gamma1`.
    pub v0: VectorFn,
    pub sigma0: TensorFn,
    /// Midpoint subintervals for the step averages of `f`, `h` and the strain rate.
    pub time_quad: usize,
    pub solver: SolverSettings,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("nu", &self.nu)
            .field("t_final", &self.t_final)
            .field("n_steps", &self.n_steps)
            .field("mode", &self.mode)
            .field("time_quad", &self.time_quad)
            .finish_non_exhaustive()
    }
}

pub fn constant_scalar(c: f64) -> ScalarFn {
    Arc::new(move |_, _| c)
}

pub fn constant_vector(c: [f64; 2]) -> VectorFn {
    Arc::new(move |_, _| c)
}

pub fn constant_tensor(c: SymMat) -> TensorFn {
    Arc::new(move |_, _| c)
}

impl ProblemSpec {
    /// Problem with zero data and `g = 1`.
    pub fn new(mode: Mode, nu: f64, t_final: f64, n_steps: usize) -> Self {
        let dim = match &mode {
            Mode::Fem(_) => 2,
            Mode::Pointwise { dim, .. } => *dim,
        };
        Self {
            nu,
            t_final,
            n_steps,
            mode,
            f: constant_vector([0.0, 0.0]),
            h: constant_tensor(SymMat::zeros(dim)),
            p: constant_tensor(SymMat::zeros(dim)),
            g: constant_scalar(1.0),
            v0: constant_vector([0.0, 0.0]),
            sigma0: constant_tensor(SymMat::zeros(dim)),
            time_quad: 4,
            solver: SolverSettings::default(),
        }
    }

    pub fn pointwise(dim: usize, t_final: f64, n_steps: usize) -> Self {
        let zero = SymMat::zeros(dim);
        Self::new(Mode::Pointwise { dim, strain_rate: constant_tensor(zero) }, 1.0, t_final, n_steps)
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.n_steps as f64
    }

    pub fn time(&self, n: usize) -> f64 {
        if n == self.n_steps {
            self.t_final
        } else {
            n as f64 * self.dt()
        }
    }

    pub fn dim(&self) -> usize {
        match &self.mode {
            Mode::Fem(_) => 2,
            Mode::Pointwise { dim, .. } => *dim,
        }
    }

    pub fn with_n_steps(&self, n_steps: usize) -> Self {
        let mut s = self.clone();
        s.n_steps = n_steps;
        s
    }

    fn validate(&self) -> Result<(), StepError> {
        let bad = |m: &str| Err(StepError::InvalidSpec(m.to_string()));
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return bad("viscosity nu must be positive");
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return bad("final time must be positive");
        }
        if self.n_steps == 0 {
            return bad("number of steps must be at least 1");
        }
        if self.time_quad == 0 {
            return bad("time quadrature needs at least one subinterval");
        }
        if let Mode::Pointwise { dim, .. } = self.mode {
            if dim != 2 && dim != 3 {
                return bad("pointwise dimension must be 2 or 3");
            }
        }
        Ok(())
    }
}

/// Composite midpoint average of `f` over `(t_{n-1}, t_n)` with `quad_points` subintervals.
pub fn time_average<T, F>(f: F, n: usize, dt: f64, quad_points: usize) -> T
where
    T: Copy + Add<Output = T> + Mul<f64, Output = T>,
    F: Fn(f64) -> T,
{
    assert!(n >= 1 && quad_points >= 1);
    let t0 = (n - 1) as f64 * dt;
    let w = dt / quad_points as f64;
    let mut acc = f(t0 + 0.5 * w);
    for k in 1..quad_points {
        acc = acc + f(t0 + (k as f64 + 0.5) * w);
    }
    acc * (1.0 / quad_points as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Vec2([f64; 2]);

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2([self.0[0] + o.0[0], self.0[1] + o.0[1]])
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2([self.0[0] * s, self.0[1] * s])
    }
}

/// Discrete data of step `n`, one entry per element (or one in pointwise mode).
#[derive(Clone, Debug)]
pub struct StepData {
    pub f: Vec<[f64; 2]>,
    pub h: StressField,
    pub p: StressField,
    pub g: Vec<f64>,
    /// Prescribed strain rate, pointwise mode only.
    pub strain_rate: Option<StressField>,
}

/// Per-step bookkeeping.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepStats {
    pub cg_iterations: usize,
    pub fp_iterations: usize,
    pub fp_converged: bool,
    /// `min_e g_n - |(sigma_n + p_n)^D|`.
    pub yield_slack: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SchemeState {
    pub n: usize,
    pub t: f64,
    pub v: Option<VelocityField>,
    pub sigma_star: StressField,
    pub sigma: StressField,
    pub stats: StepStats,
}

enum Discretization {
    Fem {
        space: Arc<FemSpace>,
        /// `M/dt + (nu + dt) K`, constrained.
        proj_matrix: SparseSym,
        /// `M/dt + nu K`, constrained.
        visc_matrix: SparseSym,
    },
    Pointwise {
        strain_rate: TensorFn,
    },
}

/// Advances one problem with one scheme.
pub struct Stepper {
    spec: ProblemSpec,
    scheme: Scheme,
    disc: Discretization,
    points: Vec<[f64; 2]>,
}

impl Stepper {
    pub fn new(spec: &ProblemSpec, scheme: Scheme) -> Result<Self, StepError> {
        spec.validate()?;
        let space = match &spec.mode {
            Mode::Fem(m) => Some(Arc::new(FemSpace::new(build_rect_mesh(m.nx, m.ny, m.lx, m.ly, m.gamma1)?))),
            Mode::Pointwise { .. } => None,
        };
        Self::build(spec, scheme, space)
    }

    /// Reuses an assembled space; the mesh in `spec.mode` is ignored.
    pub fn with_space(spec: &ProblemSpec, scheme: Scheme, space: Arc<FemSpace>) -> Result<Self, StepError> {
        spec.validate()?;
        Self::build(spec, scheme, Some(space))
    }

    fn build(spec: &ProblemSpec, scheme: Scheme, space: Option<Arc<FemSpace>>) -> Result<Self, StepError> {
        let dt = spec.dt();
        let (disc, points) = match (space, &spec.mode) {
            (Some(space), _) => {
                let m = space.mass();
                let k = space.strain_stiffness();
                let (proj_matrix, _) = apply_dirichlet(&m.linear_combination(1.0 / dt, k, spec.nu + dt), &[], space.mesh());
                let (visc_matrix, _) = apply_dirichlet(&m.linear_combination(1.0 / dt, k, spec.nu), &[], space.mesh());
                let points = (0..space.mesh().n_elements()).map(|e| space.mesh().centroid(e)).collect();
                (Discretization::Fem { space, proj_matrix, visc_matrix }, points)
            }
            (None, Mode::Pointwise { strain_rate, .. }) => {
                (Discretization::Pointwise { strain_rate: strain_rate.clone() }, vec![[0.0, 0.0]])
            }
            (None, Mode::Fem(_)) => unreachable!("FEM mode always has a space"),
        };
        Ok(Self { spec: spec.clone(), scheme, disc, points })
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn space(&self) -> Option<&Arc<FemSpace>> {
        match &self.disc {
            Discretization::Fem { space, .. } => Some(space),
            Discretization::Pointwise { .. } => None,
        }
    }

    /// Sampling points: element centroids, or the origin in pointwise mode.
    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    /// `p(t)` and `g(t)` at the sampling points.
    pub fn constraint_at(&self, t: f64) -> (StressField, Vec<f64>) {
        let p = StressField(self.points.iter().map(|&x| (self.spec.p)(t, x)).collect());
        let g = self.points.iter().map(|&x| (self.spec.g)(t, x)).collect();
        (p, g)
    }

    pub fn step_data(&self, n: usize) -> StepData {
        let spec = &self.spec;
        let dt = spec.dt();
        let q = spec.time_quad;
        let f = self.points.iter().map(|&x| time_average(|t| Vec2((spec.f)(t, x)), n, dt, q).0).collect();
        let h = StressField(self.points.iter().map(|&x| time_average(|t| (spec.h)(t, x), n, dt, q)).collect());
        let (p, g) = self.constraint_at(spec.time(n));
        let strain_rate = match &self.disc {
            Discretization::Pointwise { strain_rate, .. } => Some(StressField(
                self.points.iter().map(|&x| time_average(|t| strain_rate(t, x), n, dt, q)).collect(),
            )),
            Discretization::Fem { .. } => None,
        };
        StepData { f, h, p, g, strain_rate }
    }

    /// State at `t = 0`, with `sigma*_0 = sigma_0`. Checks `g(0) >= 0` and `sigma_0 in K(0)`.
    pub fn initial_state(&self) -> Result<SchemeState, StepError> {
        let spec = &self.spec;
        let dim = spec.dim();
        let sigma = StressField(self.points.iter().map(|&x| (spec.sigma0)(0.0, x)).collect());
        if let Some(bad) = sigma.values().iter().position(|s| s.dim() != dim) {
            return Err(StepError::InvalidSpec(format!("initial stress at point {bad} has dimension {}", sigma.values()[bad].dim())));
        }
        let (p, g) = self.constraint_at(0.0);
        check_nonnegative(&g, 0.0)?;
        let mut min_slack = f64::INFINITY;
        for (e, ((s, p), &g)) in sigma.values().iter().zip(p.values()).zip(&g).enumerate() {
            let slack = yield_slack(s, p, g);
            if slack < -feasibility_tol(g) {
                return Err(StepError::InfeasibleInitialStress { element: e, slack });
            }
            min_slack = min_slack.min(slack);
        }
        let v = self.space().map(|space| {
            let v0 = &spec.v0;
            VelocityField::interpolate(space.mesh(), |x| v0(0.0, x))
        });
        Ok(SchemeState {
            n: 0,
            t: 0.0,
            v,
            sigma_star: sigma.clone(),
            sigma,
            stats: StepStats { fp_converged: true, yield_slack: min_slack, ..Default::default() },
        })
    }

    /// Checks `g >= 0` at every sampling point of every grid time.
    pub fn check_yield_bound(&self) -> Result<(), StepError> {
        for n in 0..=self.spec.n_steps {
            let t = self.spec.time(n);
            let (_, g) = self.constraint_at(t);
            check_nonnegative(&g, t)?;
        }
        Ok(())
    }

    /// Advances `prev` (at step `n - 1`) to step `n`.
    pub fn step(&self, prev: &SchemeState, n: usize) -> Result<SchemeState, StepError> {
        let data = self.step_data(n);
        check_nonnegative(&data.g, self.spec.time(n))?;
        match self.scheme {
            Scheme::Projection => self.step_projection(prev, n, &data),
            Scheme::Implicit => self.step_implicit(prev, n, &data),
            Scheme::Explicit => self.step_explicit(prev, n, &data),
        }
    }

    fn project(&self, trial: &StressField, data: &StepData) -> Result<(StressField, f64), StepError> {
        let mut min_slack = f64::INFINITY;
        let mut out = Vec::with_capacity(trial.len());
        for ((s, p), &g) in trial.values().iter().zip(data.p.values()).zip(&data.g) {
            let projected = project_constraint(s, p, g)?;
            min_slack = min_slack.min(yield_slack(&projected, p, g));
            out.push(projected);
        }
        Ok((StressField(out), min_slack))
    }

    /// `sigma_{n-1} + dt (strain + h_n)`.
    fn trial_stress(&self, prev_sigma: &StressField, strain: &StressField, data: &StepData) -> StressField {
        let dt = self.spec.dt();
        StressField(
            prev_sigma
                .values()
                .iter()
                .zip(strain.values())
                .zip(data.h.values())
                .map(|((s, e), h)| *s + (*e + *h) * dt)
                .collect(),
        )
    }

    /// Solves `matrix v = M v_prev / dt + F - B(stress)` with Dirichlet rows removed.
    fn solve_momentum(
        &self,
        matrix: &SparseSym,
        v_prev: &VelocityField,
        guess: &VelocityField,
        stress: &StressField,
        data: &StepData,
        n: usize,
    ) -> Result<(VelocityField, usize), StepError> {
        let Discretization::Fem { space, .. } = &self.disc else { unreachable!() };
        let dt = self.spec.dt();
        let mv = space.mass().spmv(v_prev.values()).map_err(|source| StepError::Solver { step: n, source })?;
        let f = space.body_load(&data.f)?;
        let b = space.stress_load(stress)?;
        let rhs: Vec<f64> = mv
            .iter()
            .zip(&f)
            .zip(&b)
            .zip(space.constrained())
            .map(|(((m, f), b), &c)| if c { 0.0 } else { m / dt + f - b })
            .collect();
        let s = &self.spec.solver;
        let sol = cg_solve_from(matrix, &rhs, guess.values(), s.cg_tol, s.cg_max_iter)
            .map_err(|source| StepError::Solver { step: n, source })?;
        Ok((VelocityField(sol.x), sol.iterations))
    }

    fn step_projection(&self, prev: &SchemeState, n: usize, data: &StepData) -> Result<SchemeState, StepError> {
        let (v, strain, cg_iterations) = match &self.disc {
            Discretization::Fem { space, proj_matrix, .. } => {
                let v_prev = prev.v.as_ref().expect("FEM state carries velocity");
                let load_stress = prev.sigma.axpy(self.spec.dt(), &data.h);
                let (v, its) = self.solve_momentum(proj_matrix, v_prev, v_prev, &load_stress, data, n)?;
                let strain = space.strain_of(&v)?;
                (Some(v), strain, its)
            }
            Discretization::Pointwise { .. } => (None, data.strain_rate.clone().expect("pointwise strain rate"), 0),
        };
        let sigma_star = self.trial_stress(&prev.sigma, &strain, data);
        let (sigma, yield_slack) = self.project(&sigma_star, data)?;
        Ok(SchemeState {
            n,
            t: self.spec.time(n),
            v,
            sigma_star,
            sigma,
            stats: StepStats { cg_iterations, fp_iterations: 0, fp_converged: true, yield_slack },
        })
    }

    fn step_explicit(&self, prev: &SchemeState, n: usize, data: &StepData) -> Result<SchemeState, StepError> {
        let Discretization::Fem { space, visc_matrix, .. } = &self.disc else {
            return self.step_projection(prev, n, data);
        };
        let v_prev = prev.v.as_ref().expect("FEM state carries velocity");
        let (v, cg_iterations) = self.solve_momentum(visc_matrix, v_prev, v_prev, &prev.sigma, data, n)?;
        let sigma_star = self.trial_stress(&prev.sigma, &space.strain_of(&v)?, data);
        let (sigma, yield_slack) = self.project(&sigma_star, data)?;
        Ok(SchemeState {
            n,
            t: self.spec.time(n),
            v: Some(v),
            sigma_star,
            sigma,
            stats: StepStats { cg_iterations, fp_iterations: 0, fp_converged: true, yield_slack },
        })
    }

    /// Picard iteration on the fully implicit step, started from the projection
    /// step. Non-convergence is recorded in `stats.fp_converged`.
    fn step_implicit(&self, prev: &SchemeState, n: usize, data: &StepData) -> Result<SchemeState, StepError> {
        let start = self.step_projection(prev, n, data)?;
        let Discretization::Fem { space, visc_matrix, .. } = &self.disc else {
            let mut s = start;
            s.stats.fp_iterations = 1;
            return Ok(s);
        };
        let settings = &self.spec.solver;
        let v_prev = prev.v.as_ref().expect("FEM state carries velocity");
        let mut v = start.v.clone().expect("FEM state carries velocity");
        let mut sigma = start.sigma;
        let mut sigma_star = start.sigma_star;
        let mut slack = start.stats.yield_slack;
        let mut cg_total = start.stats.cg_iterations;
        let mut converged = false;
        let mut iterations = 0;
        while iterations < settings.fp_max_iter {
            iterations += 1;
            let (v_new, its) = self.solve_momentum(visc_matrix, v_prev, &v, &sigma, data, n)?;
            cg_total += its;
            let trial = self.trial_stress(&prev.sigma, &space.strain_of(&v_new)?, data);
            let (next, s) = self.project(&trial, data)?;
            let change = space.stress_l2(&next.sub(&sigma));
            v = v_new;
            sigma = next;
            sigma_star = trial;
            slack = s;
            if change <= settings.fp_tol {
                converged = true;
                break;
            }
        }
        Ok(SchemeState {
            n,
            t: self.spec.time(n),
            v: Some(v),
            sigma_star,
            sigma,
            stats: StepStats { cg_iterations: cg_total, fp_iterations: iterations, fp_converged: converged, yield_slack: slack },
        })
    }

    /// Runs all steps, handing each state (including `n = 0`) to `visit`.
    pub fn run_with<F>(&self, mut visit: F) -> Result<(), StepError>
    where
        F: FnMut(&SchemeState),
    {
        self.check_yield_bound()?;
        let mut state = self.initial_state()?;
        visit(&state);
        for n in 1..=self.spec.n_steps {
            state = self.step(&state, n)?;
            visit(&state);
        }
        Ok(())
    }

    pub fn run(&self) -> Result<Trajectory, StepError> {
        let mut states = Vec::with_capacity(self.spec.n_steps + 1);
        self.run_with(|s| states.push(s.clone()))?;
        Ok(Trajectory::new(self.spec.dt(), self.spec.t_final, states, self.space().cloned()))
    }
}

/// Roundoff allowance of the feasibility checks.
pub fn feasibility_tol(g: f64) -> f64 {
    1e-10 * g.max(1.0)
}

fn check_nonnegative(g: &[f64], t: f64) -> Result<(), StepError> {
    match g.iter().position(|&x| !(x >= 0.0) || !x.is_finite()) {
        Some(e) => Err(StepError::NegativeYield { t, element: e, value: g[e] }),
        None => Ok(()),
    }
}

/// Runs `spec` with `scheme` and collects the trajectory.
pub fn run(spec: &ProblemSpec, scheme: Scheme) -> Result<Trajectory, StepError> {
    Stepper::new(spec, scheme)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::Side;
    use approx::assert_abs_diff_eq;

    const S2: f64 = std::f64::consts::SQRT_2;

    fn radial_0d(n_steps: usize, t_final: f64) -> ProblemSpec {
        let mut spec = ProblemSpec::pointwise(2, t_final, n_steps);
        spec.h = constant_tensor(SymMat::new2(1.0, 0.0, -1.0));
        spec
    }

    fn small_fem(n_steps: usize) -> ProblemSpec {
        let mesh = MeshConfig { nx: 4, ny: 4, lx: 1.0, ly: 1.0, gamma1: SideSet::only(Side::Left) };
        ProblemSpec::new(Mode::Fem(mesh), 1.0, 0.5, n_steps)
    }

    #[test]
    fn time_average_examples() {
        assert_eq!(time_average(|_| 3.5, 4, 0.1, 3), 3.5);
        assert_abs_diff_eq!(time_average(|t| t, 1, 0.2, 1), 0.1, epsilon = 1e-16);
        // exact for linear with any subdivision
        assert_abs_diff_eq!(time_average(|t| 2.0 * t + 1.0, 3, 0.5, 5), 2.0 * 1.25 + 1.0, epsilon = 1e-14);
    }

    #[test]
    fn point_sampled_data() {
        let mut spec = radial_0d(10, 1.0);
        spec.g = Arc::new(|t, _| 1.0 + t * t);
        let st = Stepper::new(&spec, Scheme::Projection).unwrap();
        let d = st.step_data(3);
        assert_eq!(d.g[0], 1.0 + spec.time(3) * spec.time(3));
    }

    #[test]
    fn pointwise_step_inside() {
        let spec = radial_0d(10, 1.0);
        let st = Stepper::new(&spec, Scheme::Projection).unwrap();
        let s1 = st.step(&st.initial_state().unwrap(), 1).unwrap();
        assert!((s1.sigma_star.values()[0] - SymMat::new2(0.1, 0.0, -0.1)).norm() < 1e-15);
        assert_eq!(s1.sigma, s1.sigma_star);
    }

    #[test]
    fn pointwise_step_projects_radially() {
        let spec = radial_0d(10, 1.0);
        let st = Stepper::new(&spec, Scheme::Projection).unwrap();
        let mut prev = st.initial_state().unwrap();
        prev.sigma = StressField(vec![SymMat::new2(0.7, 0.0, -0.7)]);
        let s = st.step(&prev, 1).unwrap();
        assert!((s.sigma_star.values()[0] - SymMat::new2(0.8, 0.0, -0.8)).norm() < 1e-15);
        assert!((s.sigma.values()[0] - SymMat::new2(1.0 / S2, 0.0, -1.0 / S2)).norm() < 1e-15);
    }

    #[test]
    fn fem_rest_state_is_fixed() {
        for scheme in [Scheme::Projection, Scheme::Implicit, Scheme::Explicit] {
            let traj = run(&small_fem(3), scheme).unwrap();
            for s in traj.states() {
                assert!(s.v.as_ref().unwrap().values().iter().all(|&x| x == 0.0));
                assert!(s.sigma.values().iter().all(|m| m.norm() == 0.0));
            }
            if scheme == Scheme::Implicit {
                assert_eq!(traj.states()[1].stats.fp_iterations, 1);
            }
        }
    }

    #[test]
    fn single_step_run() {
        let mut spec = small_fem(1);
        spec.f = constant_vector([0.0, -1.0]);
        let traj = run(&spec, Scheme::Projection).unwrap();
        assert_eq!(traj.states().len(), 2);
        let st = Stepper::new(&spec, Scheme::Projection).unwrap();
        let direct = st.step(&st.initial_state().unwrap(), 1).unwrap();
        assert_eq!(traj.states()[1], direct);
    }

    #[test]
    fn projection_state_solves_the_momentum_equation() {
        let mut spec = small_fem(4);
        spec.f = constant_vector([0.5, -3.0]);
        spec.nu = 0.3;
        let st = Stepper::new(&spec, Scheme::Projection).unwrap();
        let s0 = st.initial_state().unwrap();
        let s1 = st.step(&s0, 1).unwrap();
        let space = st.space().unwrap();
        let dt = spec.dt();
        let v1 = s1.v.as_ref().unwrap();
        let dv = v1.axpy(-1.0, s0.v.as_ref().unwrap()).scaled(1.0 / dt);
        let lhs: Vec<f64> = space
            .mass()
            .spmv(dv.values())
            .unwrap()
            .iter()
            .zip(space.strain_stiffness().spmv(v1.values()).unwrap())
            .zip(space.stress_load(&s1.sigma_star).unwrap())
            .map(|((m, k), b)| m + spec.nu * k + b)
            .collect();
        let f = space.body_load(&st.step_data(1).f).unwrap();
        for ((l, r), &c) in lhs.iter().zip(&f).zip(space.constrained()) {
            if !c {
                assert_abs_diff_eq!(l, r, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn implicit_matches_projection_when_constraint_inactive() {
        let mut spec = small_fem(5);
        spec.f = constant_vector([0.0, -1.0]);
        spec.g = constant_scalar(1e6);
        let a = run(&spec, Scheme::Projection).unwrap();
        let b = run(&spec, Scheme::Implicit).unwrap();
        assert!(b.states().iter().all(|s| s.stats.fp_converged));
        let space = a.space().unwrap();
        for (x, y) in a.states().iter().zip(b.states()) {
            assert!(space.stress_l2(&x.sigma.sub(&y.sigma)) < 1e-9);
        }
    }

    #[test]
    fn implicit_fixed_point_converges_under_yielding() {
        let mut spec = small_fem(10);
        spec.f = constant_vector([0.0, -8.0]);
        let traj = run(&spec, Scheme::Implicit).unwrap();
        assert!(traj.states().iter().all(|s| s.stats.fp_converged));
        assert!(traj.states().iter().any(|s| s.stats.fp_iterations > 1));
        assert!(traj.states().iter().all(|s| s.stats.yield_slack >= -1e-10));
    }

    #[test]
    fn infeasible_initial_stress_rejected() {
        let mut spec = radial_0d(4, 1.0);
        spec.sigma0 = constant_tensor(SymMat::new2(2.0, 0.0, -2.0));
        assert!(matches!(run(&spec, Scheme::Projection), Err(StepError::InfeasibleInitialStress { .. })));
    }

    #[test]
    fn negative_yield_rejected() {
        let mut spec = radial_0d(4, 1.0);
        spec.g = Arc::new(|t, _| 0.5 - t);
        assert!(matches!(run(&spec, Scheme::Projection), Err(StepError::NegativeYield { .. })));
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = radial_0d(4, 1.0);
        spec.n_steps = 0;
        assert!(matches!(run(&spec, Scheme::Projection), Err(StepError::InvalidSpec(_))));
        let mut spec = small_fem(2);
        spec.nu = 0.0;
        assert!(matches!(run(&spec, Scheme::Projection), Err(StepError::InvalidSpec(_))));
    }

    #[test]
    fn solver_failure_reports_step() {
        let mut spec = small_fem(3);
        spec.f = constant_vector([0.0, -1.0]);
        spec.solver.cg_max_iter = 1;
        match run(&spec, Scheme::Projection) {
            Err(StepError::Solver { step, .. }) => assert_eq!(step, 1),
            other => panic!("expected solver error, got {other:?}"),
        }
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in [Scheme::Projection, Scheme::Implicit, Scheme::Explicit] {
            assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
        }
        assert!("newton".parse::<Scheme>().is_err());
    }
}
