use std::sync::Arc;

use super::{SchemeState, StepError};
use crate::fem::{FemSpace, StressField, VelocityField};

/// Piecewise-linear (`Hat`) or right-continuous piecewise-constant (`Bar`)
/// reconstruction in time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Interpolant {
    Hat,
    Bar,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldKind {
    Velocity,
    Stress,
    TrialStress,
}

#[derive(Clone, Debug, PartialEq)]
pub enum FieldValue {
    Velocity(VelocityField),
    Stress(StressField),
}

/// States `n = 0..=N` on a uniform grid.
#[derive(Clone, Debug)]
pub struct Trajectory {
    dt: f64,
    t_final: f64,
    states: Vec<SchemeState>,
    space: Option<Arc<FemSpace>>,
}

impl Trajectory {
    pub fn new(dt: f64, t_final: f64, states: Vec<SchemeState>, space: Option<Arc<FemSpace>>) -> Self {
        assert!(!states.is_empty(), "trajectory needs the initial state");
        Self { dt, t_final, states, space }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn n_steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn states(&self) -> &[SchemeState] {
        &self.states
    }

    pub fn space(&self) -> Option<&Arc<FemSpace>> {
        self.space.as_ref()
    }

    /// Steps where the implicit fixed point hit its iteration cap.
    pub fn flagged_steps(&self) -> Vec<usize> {
        self.states.iter().filter(|s| !s.stats.fp_converged).map(|s| s.n).collect()
    }

    fn check_time(&self, t: f64) -> Result<(), StepError> {
        let slack = 1e-12 * self.t_final;
        if !(t >= -slack && t <= self.t_final + slack) {
            return Err(StepError::OutOfRange { t, t_final: self.t_final });
        }
        Ok(())
    }

    /// `k` with `t in (t_{k-1}, t_k]`, and `0` for `t = 0`.
    pub fn bar_index(&self, t: f64) -> Result<usize, StepError> {
        self.check_time(t)?;
        if t <= 0.0 {
            return Ok(0);
        }
        let s = t / self.dt;
        let k = (s - 1e-9).ceil().max(1.0) as usize;
        Ok(k.min(self.n_steps()))
    }

    /// `(k, theta)` with `t = (1 - theta) t_{k-1} + theta t_k`, `k >= 1`.
    pub fn hat_position(&self, t: f64) -> Result<(usize, f64), StepError> {
        self.check_time(t)?;
        let s = (t / self.dt).clamp(0.0, self.n_steps() as f64);
        let mut k = (s.ceil() as usize).max(1).min(self.n_steps());
        if (s - (k - 1) as f64).abs() < 1e-9 && k > 1 {
            // snap onto the left node to avoid a 1e-16 blend
            k -= 1;
        }
        let theta = (s - (k - 1) as f64).clamp(0.0, 1.0);
        let theta = if (theta - 1.0).abs() < 1e-9 { 1.0 } else if theta < 1e-9 { 0.0 } else { theta };
        Ok((k, theta))
    }

    fn velocity(&self, k: usize) -> Result<&VelocityField, StepError> {
        self.states[k].v.as_ref().ok_or(StepError::NoVelocity)
    }

    fn stress(&self, k: usize, kind: FieldKind) -> &StressField {
        match kind {
            FieldKind::TrialStress => &self.states[k].sigma_star,
            _ => &self.states[k].sigma,
        }
    }

    pub fn hat_velocity(&self, t: f64) -> Result<VelocityField, StepError> {
        let (k, theta) = self.hat_position(t)?;
        Ok(self.velocity(k - 1)?.lerp(self.velocity(k)?, theta))
    }

    pub fn bar_velocity(&self, t: f64) -> Result<VelocityField, StepError> {
        Ok(self.velocity(self.bar_index(t)?)?.clone())
    }

    pub fn hat_stress(&self, t: f64, kind: FieldKind) -> Result<StressField, StepError> {
        let (k, theta) = self.hat_position(t)?;
        Ok(self.stress(k - 1, kind).lerp(self.stress(k, kind), theta))
    }

    pub fn bar_stress(&self, t: f64, kind: FieldKind) -> Result<StressField, StepError> {
        Ok(self.stress(self.bar_index(t)?, kind).clone())
    }
}

/// Evaluates the `kind` reconstruction of `field` at time `t`.
pub fn interpolant_eval(traj: &Trajectory, t: f64, kind: Interpolant, field: FieldKind) -> Result<FieldValue, StepError> {
    match (field, kind) {
        (FieldKind::Velocity, Interpolant::Hat) => traj.hat_velocity(t).map(FieldValue::Velocity),
        (FieldKind::Velocity, Interpolant::Bar) => traj.bar_velocity(t).map(FieldValue::Velocity),
        (_, Interpolant::Hat) => traj.hat_stress(t, field).map(FieldValue::Stress),
        (_, Interpolant::Bar) => traj.bar_stress(t, field).map(FieldValue::Stress),
    }
}
