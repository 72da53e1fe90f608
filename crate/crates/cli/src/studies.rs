//! Study drivers behind `run`, `stability` and `convergence`.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;
use std::sync::Arc;
use std::thread;

use vmsweep::fem::vtk::write_vtk;
use vmsweep::fem::{FemSpace, StressField, VelocityField};
use vmsweep::stepper::{discrete_norms, energy_check, FieldKind, Mode, NormReport, SchemeState, StepError, Stepper, Trajectory};

use crate::config::{ConfigError, RunConfig};
use crate::output::{loglog_slope, Cell, CsvWriter};
use crate::CliError;

pub const NORMS_HEADER: [&str; 6] = ["n", "t", "v_norm_h", "sigma_norm_h", "yield_slack", "cg_iterations"];

pub const STABILITY_HEADER: [&str; 16] = [
    "n_steps",
    "dt",
    "dual_norm_dv",
    "linf_h_v",
    "l2_v_v",
    "gap_v",
    "linf_h_sigma_star",
    "linf_h_sigma",
    "gap_sigma",
    "h1_h_sigma_hat",
    "gap_v_l2",
    "gap_sigma_l2",
    "energy_lhs_max",
    "energy_rhs",
    "energy_ok",
    "fp_flagged",
];

pub const CONVERGENCE_HEADER: [&str; 5] = ["n_steps", "dt", "err_sigma_linf_h", "err_v_linf_h", "err_v_l2_v"];

pub const SLOPES_HEADER: [&str; 2] = ["quantity", "slope"];

pub const ORDERS_HEADER: [&str; 4] = ["quantity", "n_coarse", "n_fine", "order"];

fn stress_norm(space: Option<&FemSpace>, s: &StressField) -> f64 {
    match space {
        Some(sp) => sp.stress_l2(s),
        None => s.values().iter().map(|x| x.norm_sq()).sum::<f64>().sqrt(),
    }
}

fn velocity_norm(space: Option<&FemSpace>, v: Option<&VelocityField>) -> f64 {
    match (space, v) {
        (Some(sp), Some(v)) => sp.velocity_l2(v),
        _ => 0.0,
    }
}

fn ensure_dir(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(CliError::Io)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub steps: usize,
    pub min_yield_slack: f64,
    pub snapshots: usize,
    pub flagged_steps: Vec<usize>,
}

/// One trajectory: `norms.csv` plus VTK snapshots every `output.snapshot_stride` steps.
pub fn cmd_run(cfg: &RunConfig, out: &Path) -> Result<RunSummary, CliError> {
    ensure_dir(out)?;
    let stepper = Stepper::new(&cfg.spec, cfg.scheme)?;
    let space = stepper.space().cloned();
    let stride = cfg.raw.output.snapshot_stride;
    let n_steps = cfg.spec.n_steps;
    let mut csv = CsvWriter::create(&out.join("norms.csv"), &NORMS_HEADER)?;
    let mut summary = RunSummary { steps: n_steps, min_yield_slack: f64::INFINITY, snapshots: 0, flagged_steps: Vec::new() };
    let mut io_err: Option<std::io::Error> = None;
    stepper.run_with(|s: &SchemeState| {
        if io_err.is_some() {
            return;
        }
        let sp = space.as_deref();
        summary.min_yield_slack = summary.min_yield_slack.min(s.stats.yield_slack);
        if !s.stats.fp_converged {
            summary.flagged_steps.push(s.n);
        }
        let row = vec![
            Cell::from(s.n),
            s.t.into(),
            velocity_norm(sp, s.v.as_ref()).into(),
            stress_norm(sp, &s.sigma).into(),
            s.stats.yield_slack.into(),
            s.stats.cg_iterations.into(),
        ];
        let mut result = csv.row(row);
        if let (Some(sp), true) = (sp, stride > 0 && (s.n % stride == 0 || s.n == n_steps)) {
            result = result.and_then(|_| write_snapshot(out, sp, s));
            summary.snapshots += 1;
        }
        if let Err(e) = result {
            io_err = Some(e);
        }
    })?;
    if let Some(e) = io_err {
        return Err(CliError::Io(e));
    }
    csv.finish()?;
    Ok(summary)
}

fn write_snapshot(out: &Path, space: &FemSpace, s: &SchemeState) -> std::io::Result<()> {
    let file = File::create(out.join(format!("snapshot_{:05}.vtk", s.n)))?;
    let mut w = BufWriter::new(file);
    let title = format!("vmsweep step {} t={:e}", s.n, s.t);
    write_vtk(&mut w, &title, space.mesh(), s.v.as_ref(), &[("sigma", &s.sigma), ("sigma_star", &s.sigma_star)])?;
    std::io::Write::flush(&mut w)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilityRow {
    pub n_steps: usize,
    pub dt: f64,
    pub norms: NormReport,
    /// `||v_hat - v_bar||_{L2(H)}`.
    pub gap_v_l2: f64,
    /// `||sigma_bar - sigma_bar*||_{L2(H)}`.
    pub gap_sigma_l2: f64,
    pub energy_lhs_max: f64,
    pub energy_rhs: f64,
    pub energy_ok: bool,
    pub fp_flagged: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilityReport {
    pub korn: f64,
    pub rows: Vec<StabilityRow>,
    pub slope_gap_sigma_l2: Option<f64>,
    pub slope_gap_v_l2: Option<f64>,
}

fn study_list(cfg: &RunConfig) -> Result<&[usize], CliError> {
    let list = &cfg.raw.study.n_list;
    if list.is_empty() {
        return Err(CliError::Config(ConfigError::Invalid {
            field: "study.n_list".into(),
            line: None,
            message: "this command needs a non-empty list of step counts".into(),
        }));
    }
    Ok(list)
}

/// Runs `f(n)` for every `n` concurrently, returning results in input order.
fn par_map<T, F>(ns: &[usize], f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let f = &f;
    thread::scope(|scope| {
        let handles: Vec<_> = ns.iter().map(|&n| scope.spawn(move || f(n))).collect();
        handles.into_iter().map(|h| h.join().expect("study worker panicked")).collect()
    })
}

/// Norm reports and the energy inequality over `study.n_list` (FEM mode).
pub fn stability_study(cfg: &RunConfig) -> Result<StabilityReport, CliError> {
    let list = study_list(cfg)?;
    if !matches!(cfg.spec.mode, Mode::Fem(_)) {
        return Err(CliError::Config(ConfigError::Invalid {
            field: "mode".into(),
            line: None,
            message: "the stability study needs mode \"fem\"".into(),
        }));
    }
    let first = Stepper::new(&cfg.spec.with_n_steps(list[0]), cfg.scheme)?;
    let space = first.space().expect("fem mode").clone();
    let korn = space.korn_constant(cfg.raw.study.korn_iterations)?;
    let rows = par_map(list, |n| stability_row(cfg, space.clone(), korn, n));
    let rows = rows.into_iter().collect::<Result<Vec<_>, _>>()?;
    let pts = |f: fn(&StabilityRow) -> f64| rows.iter().map(|r| (r.dt, f(r))).collect::<Vec<_>>();
    Ok(StabilityReport {
        korn,
        slope_gap_sigma_l2: loglog_slope(&pts(|r| r.gap_sigma_l2)),
        slope_gap_v_l2: loglog_slope(&pts(|r| r.gap_v_l2)),
        rows,
    })
}

fn stability_row(cfg: &RunConfig, space: Arc<FemSpace>, korn: f64, n: usize) -> Result<StabilityRow, CliError> {
    let spec = cfg.spec.with_n_steps(n);
    let stepper = Stepper::with_space(&spec, cfg.scheme, space)?;
    let traj = stepper.run()?;
    let norms = discrete_norms(&traj)?;
    let energy = energy_check(&traj, &stepper, korn)?;
    let dt = spec.dt();
    Ok(StabilityRow {
        n_steps: n,
        dt,
        gap_v_l2: (dt * norms.gap_v).sqrt(),
        gap_sigma_l2: (dt * norms.gap_sigma).sqrt(),
        norms,
        energy_lhs_max: energy.max_lhs(),
        energy_rhs: energy.rhs(),
        energy_ok: energy.holds(),
        fp_flagged: traj.flagged_steps().len(),
    })
}

/// Writes `stability.csv` and `stability_slopes.csv`.
pub fn cmd_stability(cfg: &RunConfig, out: &Path) -> Result<StabilityReport, CliError> {
    ensure_dir(out)?;
    let report = stability_study(cfg)?;
    let mut csv = CsvWriter::create(&out.join("stability.csv"), &STABILITY_HEADER)?;
    for r in &report.rows {
        let n = &r.norms;
        csv.row(vec![
            r.n_steps.into(),
            r.dt.into(),
            n.dual_norm_dv.into(),
            n.linf_h_v.into(),
            n.l2_v_v.into(),
            n.gap_v.into(),
            n.linf_h_sigma_star.into(),
            n.linf_h_sigma.into(),
            n.gap_sigma.into(),
            n.h1_h_sigma_hat.into(),
            r.gap_v_l2.into(),
            r.gap_sigma_l2.into(),
            r.energy_lhs_max.into(),
            r.energy_rhs.into(),
            r.energy_ok.into(),
            r.fp_flagged.into(),
        ])?;
    }
    csv.finish()?;
    let mut slopes = CsvWriter::create(&out.join("stability_slopes.csv"), &SLOPES_HEADER)?;
    for (name, s) in [("gap_sigma_l2", report.slope_gap_sigma_l2), ("gap_v_l2", report.slope_gap_v_l2)] {
        if let Some(s) = s {
            slopes.row(vec![name.into(), s.into()])?;
        }
    }
    slopes.finish()?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub n_steps: usize,
    pub dt: f64,
    pub err_sigma_linf_h: f64,
    pub err_v_linf_h: f64,
    pub err_v_l2_v: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Order {
    pub quantity: &'static str,
    pub n_coarse: usize,
    pub n_fine: usize,
    pub order: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceReport {
    pub n_ref: usize,
    pub rows: Vec<ConvergenceRow>,
    pub orders: Vec<Order>,
}

/// Errors of `trajs` against a reference run with `n_ref` steps.
///
/// The reference is streamed; at every reference time `t_j` the coarse
/// piecewise-linear stress and velocity are compared with the reference
/// state, and `v_bar` enters the `L2(V)` error through
/// `sum_j dt_ref |v_bar(t_j) - v_j|_V^2`.
pub fn errors_against_reference(cfg: &RunConfig, trajs: &[Trajectory], n_ref: usize) -> Result<Vec<ConvergenceRow>, CliError> {
    let spec = cfg.spec.with_n_steps(n_ref);
    let stepper = match trajs.first().and_then(|t| t.space()) {
        Some(space) => Stepper::with_space(&spec, cfg.scheme, space.clone())?,
        None => Stepper::new(&spec, cfg.scheme)?,
    };
    let space = stepper.space().cloned();
    let dt_ref = spec.dt();
    let mut acc = vec![[0.0f64; 3]; trajs.len()];
    let mut failure: Option<StepError> = None;
    stepper.run_with(|s| {
        if failure.is_some() {
            return;
        }
        let sp = space.as_deref();
        for (tr, a) in trajs.iter().zip(acc.iter_mut()) {
            let res = (|| -> Result<(), StepError> {
                let sig = tr.hat_stress(s.t, FieldKind::Stress)?;
                a[0] = a[0].max(stress_norm(sp, &sig.sub(&s.sigma)));
                if let (Some(sp), Some(v)) = (sp, s.v.as_ref()) {
                    let vh = tr.hat_velocity(s.t)?;
                    a[1] = a[1].max(sp.velocity_l2(&vh.axpy(-1.0, v)));
                    if s.n > 0 {
                        let vb = tr.bar_velocity(s.t)?;
                        a[2] += dt_ref * sp.velocity_v(&vb.axpy(-1.0, v)).powi(2);
                    }
                }
                Ok(())
            })();
            if let Err(e) = res {
                failure = Some(e);
                return;
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e.into());
    }
    Ok(trajs
        .iter()
        .zip(acc)
        .map(|(tr, a)| ConvergenceRow {
            n_steps: tr.n_steps(),
            dt: tr.dt(),
            err_sigma_linf_h: a[0],
            err_v_linf_h: a[1],
            err_v_l2_v: a[2].sqrt(),
        })
        .collect())
}

/// Observed orders `ln(e_c / e_f) / ln(n_f / n_c)` between consecutive rows, where defined.
pub fn observed_orders(rows: &[ConvergenceRow]) -> Vec<Order> {
    let mut out = Vec::new();
    for w in rows.windows(2) {
        let (c, f) = (&w[0], &w[1]);
        let ratio = (f.n_steps as f64 / c.n_steps as f64).ln();
        for (quantity, ec, ef) in [
            ("err_sigma_linf_h", c.err_sigma_linf_h, f.err_sigma_linf_h),
            ("err_v_linf_h", c.err_v_linf_h, f.err_v_linf_h),
            ("err_v_l2_v", c.err_v_l2_v, f.err_v_l2_v),
        ] {
            if ec > 0.0 && ef > 0.0 {
                out.push(Order { quantity, n_coarse: c.n_steps, n_fine: f.n_steps, order: (ec / ef).ln() / ratio });
            }
        }
    }
    out
}

pub fn convergence_study(cfg: &RunConfig) -> Result<ConvergenceReport, CliError> {
    let list = study_list(cfg)?;
    let n_ref = cfg.raw.study.n_ref.ok_or_else(|| {
        CliError::Config(ConfigError::Invalid {
            field: "study.n_ref".into(),
            line: None,
            message: "the convergence study needs a reference step count".into(),
        })
    })?;
    let first = Stepper::new(&cfg.spec.with_n_steps(list[0]), cfg.scheme)?;
    let space = first.space().cloned();
    let trajs = par_map(list, |n| {
        let spec = cfg.spec.with_n_steps(n);
        match &space {
            Some(sp) => Stepper::with_space(&spec, cfg.scheme, sp.clone())?.run(),
            None => Stepper::new(&spec, cfg.scheme)?.run(),
        }
    });
    let trajs = trajs.into_iter().collect::<Result<Vec<_>, _>>()?;
    let rows = errors_against_reference(cfg, &trajs, n_ref)?;
    let orders = observed_orders(&rows);
    Ok(ConvergenceReport { n_ref, rows, orders })
}

/// Writes `convergence.csv` and `convergence_orders.csv`.
pub fn cmd_convergence(cfg: &RunConfig, out: &Path) -> Result<ConvergenceReport, CliError> {
    ensure_dir(out)?;
    let report = convergence_study(cfg)?;
    let mut csv = CsvWriter::create(&out.join("convergence.csv"), &CONVERGENCE_HEADER)?;
    for r in &report.rows {
        csv.row(vec![r.n_steps.into(), r.dt.into(), r.err_sigma_linf_h.into(), r.err_v_linf_h.into(), r.err_v_l2_v.into()])?;
    }
    csv.finish()?;
    let mut orders = CsvWriter::create(&out.join("convergence_orders.csv"), &ORDERS_HEADER)?;
    for o in &report.orders {
        orders.row(vec![o.quantity.into(), o.n_coarse.into(), o.n_fine.into(), o.order.into()])?;
    }
    orders.finish()?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn cfg(text: &str) -> RunConfig {
        parse_config(text).unwrap()
    }

    #[test]
    fn equal_step_reference_gives_zero_error() {
        let c = cfg(r#"{"scenario": "s2", "mesh": {"nx": 4, "ny": 4}, "n_steps": 8}"#);
        let tr = Stepper::new(&c.spec, c.scheme).unwrap().run().unwrap();
        let rows = errors_against_reference(&c, &[tr], 8).unwrap();
        assert_eq!(rows[0].err_sigma_linf_h, 0.0);
        assert_eq!(rows[0].err_v_linf_h, 0.0);
        assert_eq!(rows[0].err_v_l2_v, 0.0);
    }

    #[test]
    fn orders_skip_zero_errors() {
        let row = |n, e| ConvergenceRow { n_steps: n, dt: 1.0 / n as f64, err_sigma_linf_h: e, err_v_linf_h: 0.0, err_v_l2_v: e };
        let o = observed_orders(&[row(10, 0.4), row(20, 0.1)]);
        assert_eq!(o.len(), 2);
        assert!((o[0].order - 2.0).abs() < 1e-12);
        assert_eq!(o[1].quantity, "err_v_l2_v");
    }

    #[test]
    fn stability_rejects_pointwise() {
        let c = cfg(r#"{"scenario": "radial_0d", "study": {"n_list": [10, 20]}}"#);
        assert!(matches!(stability_study(&c), Err(CliError::Config(_))));
    }

    #[test]
    fn pointwise_convergence_has_no_velocity_error() {
        let c = cfg(r#"{"scenario": "radial_0d", "study": {"n_list": [10, 20], "n_ref": 400}}"#);
        let r = convergence_study(&c).unwrap();
        assert_eq!(r.rows.len(), 2);
        assert!(r.rows.iter().all(|x| x.err_v_linf_h == 0.0 && x.err_sigma_linf_h > 0.0));
        assert!(r.rows[1].err_sigma_linf_h < r.rows[0].err_sigma_linf_h);
    }
}
