//! Property suites behind `vmsweep verify`.
//!
//! Every suite reports its largest violation. Identities are measured
//! relative to the size of their operands and compared with `tol_rel`;
//! inequalities are measured absolutely and compared with `tol_abs`. The
//! projection oracle, a strict inequality up to roundoff, uses `tol_rel` as an
//! absolute bound.

use std::path::Path;
use std::thread;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vmsweep::charts::{argmin_oracle, decompose, inclusion_equivalence_check, kr_contains_via_chart, psi1, psi2, Mat};
use vmsweep::stepper::{discrete_norms, Scheme, Stepper};
use vmsweep::tensor::{membership, proj_dev_ball};
use vmsweep::SymMat;

use crate::config::{parse_config, VerifySpec};
use crate::output::{Cell, CsvWriter};
use crate::CliError;

pub const VERIFY_HEADER: [&str; 6] = ["suite", "cases", "max_violation", "tolerance", "gating", "status"];

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub cases: usize,
    pub max_violation: f64,
    pub tolerance: f64,
    /// Non-gating suites are informational and never fail the run.
    pub gating: bool,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        !self.gating || self.max_violation <= self.tolerance
    }

    pub fn status(&self) -> &'static str {
        match (self.gating, self.passed()) {
            (false, _) => "info",
            (true, true) => "pass",
            (true, false) => "fail",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyReport {
    pub suites: Vec<SuiteResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(SuiteResult::passed)
    }
}

fn rng_for(seed: u64, suite: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(suite))
}

fn random_sym(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> SymMat {
    let upper: Vec<f64> = (0..dim * (dim + 1) / 2).map(|_| rng.random_range(-scale..scale)).collect();
    SymMat::from_upper(dim, &upper).expect("dim 2 or 3")
}

/// Pulls the deviator of `b` into the radius-`r` ball at a random depth.
fn random_inside(rng: &mut ChaCha8Rng, dim: usize, r: f64) -> SymMat {
    let b = random_sym(rng, dim, 5.0);
    let dev = b.deviator();
    let n = dev.norm();
    if n == 0.0 {
        return b;
    }
    b.spherical() + dev * (r * rng.random_range(0.0..=1.0) / n)
}

fn rel(err: f64, size: f64) -> f64 {
    err / size.max(1.0)
}

const DIMS: [usize; 2] = [2, 3];

/// Runs `samples` cases per dimension of `check` and keeps the worst value.
fn per_dim<F>(samples: usize, seed: u64, suite: u64, mut check: F) -> (usize, f64)
where
    F: FnMut(&mut ChaCha8Rng, usize) -> f64,
{
    let mut rng = rng_for(seed, suite);
    let mut worst = 0.0f64;
    for d in DIMS {
        for _ in 0..samples {
            worst = worst.max(check(&mut rng, d));
        }
    }
    (samples * DIMS.len(), worst)
}

fn phi_i(v: &VerifySpec, seed: u64) -> SuiteResult {
    let (cases, worst) = per_dim(v.samples, seed, 1, |rng, d| {
        let a = random_sym(rng, d, 5.0);
        let r = rng.random_range(0.0..4.0);
        let e = SymMat::identity(d);
        let orth = rel(e.dot(&a.deviator()).abs(), (d as f64).sqrt() * a.norm());
        let p = proj_dev_ball(&a, r).expect("r >= 0");
        let lhs = p.norm_sq();
        let split = a.spherical().norm_sq() + (p - a.spherical()).norm_sq();
        orth.max(rel((lhs - split).abs(), lhs))
    });
    SuiteResult { name: "phi_i_orthogonal_split", cases, max_violation: worst, tolerance: v.tol_rel, gating: true }
}

fn phi_ii(v: &VerifySpec, seed: u64) -> SuiteResult {
    let (cases, worst) = per_dim(v.samples, seed, 2, |rng, d| {
        let a = random_sym(rng, d, 5.0);
        let (r1, r2) = (rng.random_range(0.0..4.0), rng.random_range(0.0..4.0));
        let gap = (proj_dev_ball(&a, r1).expect("r1") - proj_dev_ball(&a, r2).expect("r2")).norm();
        (gap - (r1 - r2).abs()).max(0.0)
    });
    SuiteResult { name: "phi_ii_radius_lipschitz", cases, max_violation: worst, tolerance: v.tol_abs, gating: true }
}

fn phi_iii(v: &VerifySpec, seed: u64) -> SuiteResult {
    let (cases, worst) = per_dim(v.samples, seed, 3, |rng, d| {
        let a = random_sym(rng, d, 5.0);
        let r = rng.random_range(0.0..4.0);
        let b = random_inside(rng, d, r);
        let p = proj_dev_ball(&a, r).expect("r >= 0");
        (p - a).dot(&(p - b)).max(0.0)
    });
    SuiteResult { name: "phi_iii_obtuse_angle", cases, max_violation: worst, tolerance: v.tol_abs, gating: true }
}

fn phi_iv(v: &VerifySpec, seed: u64) -> SuiteResult {
    let (cases, worst) = per_dim(v.samples, seed, 4, |rng, d| {
        let (a, b) = (random_sym(rng, d, 5.0), random_sym(rng, d, 5.0));
        let r = rng.random_range(0.0..4.0);
        let lhs = (proj_dev_ball(&a, r).expect("r") - proj_dev_ball(&b, r).expect("r")).norm();
        (lhs - (a - b).norm()).max(0.0)
    });
    SuiteResult { name: "phi_iv_nonexpansive", cases, max_violation: worst, tolerance: v.tol_abs, gating: true }
}

fn idempotence(v: &VerifySpec, seed: u64) -> SuiteResult {
    let (cases, worst) = per_dim(v.samples, seed, 5, |rng, d| {
        let a = random_sym(rng, d, 5.0);
        let r = rng.random_range(0.0..4.0);
        let p = proj_dev_ball(&a, r).expect("r");
        rel((proj_dev_ball(&p, r).expect("r") - p).norm(), p.norm())
    });
    SuiteResult { name: "projection_idempotent", cases, max_violation: worst, tolerance: v.tol_rel, gating: true }
}

fn trace(v: &VerifySpec, seed: u64) -> SuiteResult {
    let (cases, worst) = per_dim(v.samples, seed, 6, |rng, d| {
        let a = random_sym(rng, d, 5.0);
        let r = rng.random_range(0.0..4.0);
        rel((proj_dev_ball(&a, r).expect("r").trace() - a.trace()).abs(), a.trace().abs())
    });
    SuiteResult { name: "projection_trace", cases, max_violation: worst, tolerance: v.tol_rel, gating: true }
}

fn random_coords(rng: &mut ChaCha8Rng, d: usize) -> (f64, Vec<f64>) {
    let lambda = rng.random_range(-5.0..5.0);
    let x = (0..d * d - 1).map(|_| rng.random_range(-3.0..3.0)).collect();
    (lambda, x)
}

fn chart_isometry(v: &VerifySpec, seed: u64) -> SuiteResult {
    let (cases, worst) = per_dim(v.samples, seed, 7, |rng, d| {
        let (lambda, x) = random_coords(rng, d);
        let xn = x.iter().map(|t| t * t).sum::<f64>().sqrt();
        let e1 = rel((psi1(lambda, d).expect("d").norm() - lambda.abs()).abs(), lambda.abs());
        let e2 = rel((psi2(&x, d).expect("len").norm() - xn).abs(), xn);
        e1.max(e2)
    });
    SuiteResult { name: "chart_isometry", cases, max_violation: worst, tolerance: v.tol_rel, gating: true }
}

fn chart_orthogonality(v: &VerifySpec, seed: u64) -> SuiteResult {
    let (cases, worst) = per_dim(v.samples, seed, 8, |rng, d| {
        let (lambda, x) = random_coords(rng, d);
        let xn = x.iter().map(|t| t * t).sum::<f64>().sqrt();
        let ip = Mat::from(&psi1(lambda, d).expect("d")).dot(&psi2(&x, d).expect("len"));
        rel(ip.abs(), lambda.abs() * xn)
    });
    SuiteResult { name: "chart_orthogonality", cases, max_violation: worst, tolerance: v.tol_rel, gating: true }
}

fn chart_roundtrip(v: &VerifySpec, seed: u64) -> SuiteResult {
    let (cases, worst) = per_dim(v.samples, seed, 9, |rng, d| {
        let rows: Vec<Vec<f64>> = (0..d).map(|_| (0..d).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
        let a = Mat::from_rows(&rows).expect("square");
        let c = decompose(&a).expect("d");
        let back = psi2(&c.x, d).expect("len").add(&Mat::from(&psi1(c.lambda, d).expect("d")));
        rel(back.sub(&a).norm(), a.norm())
    });
    SuiteResult { name: "chart_roundtrip", cases, max_violation: worst, tolerance: v.tol_rel, gating: true }
}

/// Counts disagreements between the chart test and the deviator test away
/// from the `1e-12` boundary band.
fn chart_membership(v: &VerifySpec, seed: u64) -> SuiteResult {
    let (cases, worst) = {
        let mut rng = rng_for(seed, 10);
        let mut mismatches = 0usize;
        for d in DIMS {
            for k in 0..v.samples {
                let a = random_sym(&mut rng, d, 3.0);
                // every tenth radius sits exactly on the deviator norm
                let r = if k % 10 == 0 { a.deviator().norm() } else { rng.random_range(0.0..4.0) };
                let chart = kr_contains_via_chart(&a, r);
                let direct = membership(&a, &SymMat::zeros(d), r, 0.0);
                if chart != direct && (a.deviator().norm() - r).abs() > 1e-12 {
                    mismatches += 1;
                }
            }
        }
        (v.samples * DIMS.len(), mismatches as f64)
    };
    SuiteResult { name: "chart_membership", cases, max_violation: worst, tolerance: v.tol_abs, gating: true }
}

fn argmin(v: &VerifySpec, seed: u64) -> SuiteResult {
    let mut rng = rng_for(seed, 11);
    let mut worst = 0.0f64;
    for k in 0..v.oracle_cases {
        let f = random_sym(&mut rng, 2, 3.0);
        let r = rng.random_range(0.0..2.0);
        let p = proj_dev_ball(&f, r).expect("r");
        let oracle = argmin_oracle(&f, r, v.oracle_samples, seed.wrapping_add(k as u64)).expect("valid oracle input");
        worst = worst.max(((p - f).norm() - oracle.best_dist).max(0.0));
    }
    SuiteResult { name: "argmin_oracle", cases: v.oracle_cases, max_violation: worst, tolerance: v.tol_rel, gating: true }
}

fn inclusion(v: &VerifySpec, seed: u64) -> SuiteResult {
    let mut rng = rng_for(seed, 12);
    let mut worst = 0.0f64;
    for k in 0..v.inclusion_setups {
        let d = DIMS[k % 2];
        let sa = random_sym(&mut rng, d, 2.0);
        let strain = random_sym(&mut rng, d, 2.0);
        let h = random_sym(&mut rng, d, 2.0);
        let p = random_sym(&mut rng, d, 2.0);
        let g = rng.random_range(0.0..2.0);
        let dt = rng.random_range(0.01..1.0);
        // start feasible so the setup matches a scheme step
        let sa = vmsweep::tensor::project_constraint(&sa, &p, g).expect("g >= 0");
        let w_seed = rng.random();
        let rep = inclusion_equivalence_check(&sa, &strain, &h, &p, g, dt, v.inclusion_witnesses, w_seed).expect("valid setup");
        worst = worst.max(rep.max_violation);
    }
    SuiteResult { name: "inclusion_equivalence", cases: v.inclusion_setups, max_violation: worst, tolerance: v.tol_abs, gating: true }
}

/// Energy ratio explicit / projection on the `explicit_blowup` scenario. Non-gating.
fn explicit_demo() -> Result<SuiteResult, CliError> {
    let cfg = parse_config(r#"{"scenario": "explicit_blowup"}"#)?;
    let size = |scheme: Scheme| -> Result<f64, CliError> {
        let traj = Stepper::new(&cfg.spec, scheme)?.run()?;
        let r = discrete_norms(&traj)?;
        Ok(r.linf_h_v.powi(2) + r.linf_h_sigma.powi(2))
    };
    let ratio = size(Scheme::Explicit)? / size(Scheme::Projection)?;
    Ok(SuiteResult { name: "explicit_blowup_energy_ratio", cases: 1, max_violation: ratio, tolerance: 1.0, gating: false })
}

type Suite = fn(&VerifySpec, u64) -> SuiteResult;

const SUITES: [Suite; 12] = [
    phi_i,
    phi_ii,
    phi_iii,
    phi_iv,
    idempotence,
    trace,
    chart_isometry,
    chart_orthogonality,
    chart_roundtrip,
    chart_membership,
    argmin,
    inclusion,
];

pub fn run_suites(v: &VerifySpec, seed: u64) -> Result<VerifyReport, CliError> {
    let mut suites: Vec<SuiteResult> = thread::scope(|scope| {
        let handles: Vec<_> = SUITES.iter().map(|s| scope.spawn(move || s(v, seed))).collect();
        handles.into_iter().map(|h| h.join().expect("suite panicked")).collect()
    });
    if v.explicit_demo {
        suites.push(explicit_demo()?);
    }
    Ok(VerifyReport { suites })
}

/// Runs the suites, prints one line per suite and writes `verify.csv`.
pub fn cmd_verify(v: &VerifySpec, seed: u64, out: &Path) -> Result<VerifyReport, CliError> {
    std::fs::create_dir_all(out)?;
    let report = run_suites(v, seed)?;
    let mut csv = CsvWriter::create(&out.join("verify.csv"), &VERIFY_HEADER)?;
    for s in &report.suites {
        println!(
            "{:<30} cases {:>7}  max violation {:>12.3e}  tolerance {:>9.1e}  {}",
            s.name,
            s.cases,
            s.max_violation,
            s.tolerance,
            s.status().to_uppercase()
        );
        csv.row(vec![s.name.into(), s.cases.into(), s.max_violation.into(), s.tolerance.into(), s.gating.into(), Cell::from(s.status())])?;
    }
    csv.finish()?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> VerifySpec {
        VerifySpec {
            samples: 200,
            oracle_cases: 5,
            oracle_samples: 2_000,
            inclusion_setups: 50,
            inclusion_witnesses: 20,
            explicit_demo: false,
            ..VerifySpec::default()
        }
    }

    #[test]
    fn small_suites_pass_and_list_each_item() {
        let r = run_suites(&small(), 3).unwrap();
        assert!(r.passed(), "{:?}", r.suites);
        let names: Vec<_> = r.suites.iter().map(|s| s.name).collect();
        for item in ["phi_i_orthogonal_split", "phi_ii_radius_lipschitz", "phi_iii_obtuse_angle", "phi_iv_nonexpansive"] {
            assert!(names.contains(&item));
        }
    }

    #[test]
    fn negative_tolerance_fails() {
        let v = VerifySpec { tol_abs: -1.0, ..small() };
        assert!(!run_suites(&v, 3).unwrap().passed());
    }

    #[test]
    fn suites_are_deterministic() {
        assert_eq!(run_suites(&small(), 9).unwrap(), run_suites(&small(), 9).unwrap());
    }

    #[test]
    fn non_gating_never_fails() {
        let s = SuiteResult { name: "x", cases: 1, max_violation: 1e9, tolerance: 1.0, gating: false };
        assert!(s.passed());
        assert_eq!(s.status(), "info");
    }
}
