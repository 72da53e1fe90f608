use super::{SchemeState, StepError, Stepper, Trajectory};
use crate::fem::{FemSpace, StressField, VelocityField};

/// Discrete norms of a trajectory. Velocity terms are zero in pointwise mode.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NormReport {
    /// `sqrt(sum dt |M (v_n - v_{n-1}) / dt|_{V*}^2)`.
    pub dual_norm_dv: f64,
    /// `max_{n >= 1} |v_n|_H`.
    pub linf_h_v: f64,
    /// `sqrt(sum dt |v_n|_V^2)`.
    pub l2_v_v: f64,
    /// `(1/dt) |v_hat - v_bar|_{L2(H)}^2 = (1/3) sum |v_n - v_{n-1}|_H^2`.
    pub gap_v: f64,
    /// `max_{n >= 1} |sigma*_n|_H`.
    pub linf_h_sigma_star: f64,
    /// `max_{n >= 1} |sigma_n|_H`.
    pub linf_h_sigma: f64,
    /// `sum |sigma_n - sigma*_n|_H^2`.
    pub gap_sigma: f64,
    /// `H^1(0,T;H)` norm of the piecewise-linear stress.
    pub h1_h_sigma_hat: f64,
}

/// Inner products of the trajectory's space; plain Frobenius in pointwise mode.
struct Metric<'a>(Option<&'a FemSpace>);

impl Metric<'_> {
    fn sdot(&self, a: &StressField, b: &StressField) -> f64 {
        match self.0 {
            Some(space) => space.stress_dot(a, b),
            None => a.values().iter().zip(b.values()).map(|(x, y)| x.dot(y)).sum(),
        }
    }

    fn snorm_sq(&self, a: &StressField) -> f64 {
        self.sdot(a, a)
    }
}

fn velocity_pair<'a>(a: &'a SchemeState, b: &'a SchemeState) -> Option<(&'a VelocityField, &'a VelocityField)> {
    Some((a.v.as_ref()?, b.v.as_ref()?))
}

pub fn discrete_norms(traj: &Trajectory) -> Result<NormReport, StepError> {
    let space = traj.space().map(|s| s.as_ref());
    let metric = Metric(space);
    let dt = traj.dt();
    let states = traj.states();
    let mut r = NormReport::default();
    let mut dual_sq = 0.0;
    let mut l2v_sq = 0.0;
    let mut h1_sq = 0.0;
    for w in states.windows(2) {
        let (prev, cur) = (&w[0], &w[1]);
        if let (Some(space), Some((v0, v1))) = (space, velocity_pair(prev, cur)) {
            let dv = v1.axpy(-1.0, v0).scaled(1.0 / dt);
            dual_sq += dt * space.velocity_dual(&dv)?.powi(2);
            let vv = space.velocity_v(v1);
            l2v_sq += dt * vv * vv;
            r.linf_h_v = r.linf_h_v.max(space.velocity_l2(v1));
            let jump = v1.axpy(-1.0, v0);
            r.gap_v += space.velocity_dot(&jump, &jump) / 3.0;
        }
        r.linf_h_sigma_star = r.linf_h_sigma_star.max(metric.snorm_sq(&cur.sigma_star).sqrt());
        r.linf_h_sigma = r.linf_h_sigma.max(metric.snorm_sq(&cur.sigma).sqrt());
        r.gap_sigma += metric.snorm_sq(&cur.sigma.sub(&cur.sigma_star));
        let (a, b) = (&prev.sigma, &cur.sigma);
        h1_sq += dt / 3.0 * (metric.snorm_sq(a) + metric.sdot(a, b) + metric.snorm_sq(b));
        h1_sq += metric.snorm_sq(&b.sub(a)) / dt;
    }
    r.dual_norm_dv = dual_sq.sqrt();
    r.l2_v_v = l2v_sq.sqrt();
    r.h1_h_sigma_hat = h1_sq.max(0.0).sqrt();
    Ok(r)
}

/// Discrete energy inequality: `lhs[m] <= c2 * data_bound` for every `m`.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyCheck {
    /// Left-hand side at `m = 0..=N`.
    pub lhs: Vec<f64>,
    /// Initial-data and load terms, before the factor `c2`.
    pub data_bound: f64,
    pub korn: f64,
    pub c2: f64,
}

impl EnergyCheck {
    pub fn rhs(&self) -> f64 {
        self.c2 * self.data_bound
    }

    pub fn max_lhs(&self) -> f64 {
        self.lhs.iter().copied().fold(0.0, f64::max)
    }

    pub fn holds(&self) -> bool {
        self.max_lhs() <= self.rhs()
    }
}

/// Evaluates the energy inequality for a FEM trajectory produced by `stepper`,
/// using `korn` as the Korn constant of the discrete space.
pub fn energy_check(traj: &Trajectory, stepper: &Stepper, korn: f64) -> Result<EnergyCheck, StepError> {
    let space = stepper.space().ok_or(StepError::NoVelocity)?;
    let spec = stepper.spec();
    let dt = traj.dt();
    let nu = spec.nu;
    let states = traj.states();
    let vel = |s: &SchemeState| s.v.as_ref().ok_or(StepError::NoVelocity).cloned();

    let (p0, _) = stepper.constraint_at(0.0);
    let v0 = vel(&states[0])?;
    let s0 = &states[0].sigma;
    let mut data = space.velocity_dot(&v0, &v0) + space.stress_dot(s0, s0) + space.stress_dot(&p0, &p0);

    let mut lhs = Vec::with_capacity(states.len());
    let energy = |v: &VelocityField, sstar: &StressField, s: &StressField, p: &StressField| {
        let a = sstar.add(p);
        let b = s.add(p);
        space.velocity_dot(v, v) + 0.5 * space.stress_dot(&a, &a) + 0.5 * space.stress_dot(&b, &b)
    };
    lhs.push(energy(&v0, &states[0].sigma_star, s0, &p0));

    let mut dissipation = 0.0;
    let mut p_prev = p0;
    for w in states.windows(2) {
        let (prev, cur) = (&w[0], &w[1]);
        let n = cur.n;
        let d = stepper.step_data(n);
        let (vp, vc) = (vel(prev)?, vel(cur)?);
        let jump = vc.axpy(-1.0, &vp);
        let sgap = cur.sigma.sub(&cur.sigma_star);
        let strain = space.strain_of(&vc)?;
        dissipation += space.velocity_dot(&jump, &jump) + 0.5 * space.stress_dot(&sgap, &sgap);
        dissipation += nu * dt * space.stress_dot(&strain, &strain);
        lhs.push(energy(&vc, &cur.sigma_star, &cur.sigma, &d.p) + dissipation);

        let f_dual = space.dual_norm(&space.body_load(&d.f)?)?;
        let dp = d.p.sub(&p_prev).scaled(1.0 / dt);
        data += dt
            * (f_dual * f_dual + space.stress_dot(&d.p, &d.p) + space.stress_dot(&dp, &dp) + space.stress_dot(&d.h, &d.h));
        p_prev = d.p;
    }
    let c2 = std::f64::consts::E * (2.0 * korn * korn / nu).max(2.0 / nu).max(4.0);
    Ok(EnergyCheck { lhs, data_bound: data, korn, c2 })
}

/// Displacements `u_n = u_{n-1} + dt v_n`, `u_0 = 0`.
pub fn accumulate_displacement(traj: &Trajectory) -> Result<Vec<VelocityField>, StepError> {
    let dt = traj.dt();
    let mut out = Vec::with_capacity(traj.states().len());
    let first = traj.states()[0].v.as_ref().ok_or(StepError::NoVelocity)?;
    let mut u = first.scaled(0.0);
    out.push(u.clone());
    for s in &traj.states()[1..] {
        u = u.axpy(dt, s.v.as_ref().ok_or(StepError::NoVelocity)?);
        out.push(u.clone());
    }
    Ok(out)
}

/// Plastic strain `E(u_n) - (sigma_n - sigma_0) + sum_k dt h_k`, accumulated from zero.
/// Constant in time while the constraint is inactive.
pub fn plastic_strain(traj: &Trajectory, stepper: &Stepper) -> Result<Vec<StressField>, StepError> {
    let space = stepper.space().ok_or(StepError::NoVelocity)?;
    let dt = traj.dt();
    let u = accumulate_displacement(traj)?;
    let s0 = &traj.states()[0].sigma;
    let mut h_acc = s0.scaled(0.0);
    let mut out = Vec::with_capacity(u.len());
    for (n, (un, st)) in u.iter().zip(traj.states()).enumerate() {
        if n > 0 {
            h_acc = h_acc.axpy(dt, &stepper.step_data(n).h);
        }
        out.push(space.strain_of(un)?.sub(&st.sigma.sub(s0)).add(&h_acc));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stepper::{constant_vector, MeshConfig, Mode, ProblemSpec, Scheme, StepStats};
    use crate::fem::{Side, SideSet};
    use crate::tensor::SymMat;

    fn pointwise_traj(values: &[f64], dt: f64) -> Trajectory {
        let states = values
            .iter()
            .enumerate()
            .map(|(n, &y)| SchemeState {
                n,
                t: n as f64 * dt,
                v: None,
                sigma_star: StressField(vec![SymMat::new2(y, 0.0, 0.0)]),
                sigma: StressField(vec![SymMat::new2(y, 0.0, 0.0)]),
                stats: StepStats::default(),
            })
            .collect();
        Trajectory::new(dt, dt * (values.len() - 1) as f64, states, None)
    }

    #[test]
    fn constant_trajectory_has_no_gaps() {
        let r = discrete_norms(&pointwise_traj(&[2.0; 5], 0.25)).unwrap();
        assert_eq!(r.gap_sigma, 0.0);
        assert_eq!(r.gap_v, 0.0);
        assert_eq!(r.linf_h_sigma, 2.0);
        // |2|_{L2(0,1)} = 2
        assert!((r.h1_h_sigma_hat - 2.0).abs() < 1e-14);
    }

    #[test]
    fn h1_norm_of_linear_ramp() {
        // sigma(t) = t on (0, 1): int t^2 + int 1 = 1/3 + 1
        let n = 8;
        let vals: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64).collect();
        let r = discrete_norms(&pointwise_traj(&vals, 1.0 / n as f64)).unwrap();
        assert!((r.h1_h_sigma_hat - (4.0f64 / 3.0).sqrt()).abs() < 1e-13);
    }

    fn fem_spec(n_steps: usize) -> ProblemSpec {
        let mesh = MeshConfig { nx: 3, ny: 3, lx: 1.0, ly: 1.0, gamma1: SideSet::only(Side::Left) };
        let mut spec = ProblemSpec::new(Mode::Fem(mesh), 1.0, 0.5, n_steps);
        spec.f = constant_vector([0.0, -0.5]);
        spec
    }

    #[test]
    fn gap_v_matches_single_jump() {
        // one step from rest: gap_v = |v_1|^2 / 3
        let spec = fem_spec(1);
        let st = Stepper::new(&spec, Scheme::Projection).unwrap();
        let tr = st.run().unwrap();
        let r = discrete_norms(&tr).unwrap();
        let v1 = tr.states()[1].v.as_ref().unwrap();
        let sp = st.space().unwrap();
        assert!((r.gap_v - sp.velocity_dot(v1, v1) / 3.0).abs() < 1e-15);
        assert!((r.linf_h_v - sp.velocity_l2(v1)).abs() < 1e-15);
    }

    #[test]
    fn norms_scale_with_data() {
        let spec = fem_spec(4);
        let mut big = spec.clone();
        big.f = constant_vector([0.0, -1.5]);
        big.g = crate::stepper::constant_scalar(1e9);
        let mut small = spec.clone();
        small.g = crate::stepper::constant_scalar(1e9);
        let a = discrete_norms(&crate::stepper::run(&small, Scheme::Projection).unwrap()).unwrap();
        let b = discrete_norms(&crate::stepper::run(&big, Scheme::Projection).unwrap()).unwrap();
        assert!((b.l2_v_v - 3.0 * a.l2_v_v).abs() < 1e-8 * b.l2_v_v);
        assert!((b.gap_v - 9.0 * a.gap_v).abs() < 1e-8 * b.gap_v);
        assert!((b.h1_h_sigma_hat - 3.0 * a.h1_h_sigma_hat).abs() < 1e-8 * b.h1_h_sigma_hat);
    }

    #[test]
    fn energy_bound_holds_and_rest_is_zero() {
        let spec = fem_spec(5);
        let st = Stepper::new(&spec, Scheme::Projection).unwrap();
        let tr = st.run().unwrap();
        let korn = st.space().unwrap().korn_constant(30).unwrap();
        let e = energy_check(&tr, &st, korn).unwrap();
        assert_eq!(e.lhs.len(), 6);
        assert!(e.holds());
        assert!(e.data_bound > 0.0);

        let mut rest = spec.clone();
        rest.f = constant_vector([0.0, 0.0]);
        let st = Stepper::new(&rest, Scheme::Projection).unwrap();
        let e = energy_check(&st.run().unwrap(), &st, korn).unwrap();
        assert_eq!(e.max_lhs(), 0.0);
        assert_eq!(e.data_bound, 0.0);
    }

    #[test]
    fn plastic_strain_constant_when_elastic() {
        let mut spec = fem_spec(6);
        spec.g = crate::stepper::constant_scalar(1e9);
        let st = Stepper::new(&spec, Scheme::Projection).unwrap();
        let tr = st.run().unwrap();
        let sp = st.space().unwrap();
        for ep in plastic_strain(&tr, &st).unwrap() {
            assert!(sp.stress_l2(&ep) < 1e-9);
        }
    }

    #[test]
    fn displacement_needs_velocity() {
        assert!(matches!(accumulate_displacement(&pointwise_traj(&[0.0, 1.0], 1.0)), Err(StepError::NoVelocity)));
    }
}
