//! JSON run configuration.
//!
//! Data functions are picked from a small catalog by `kind`:
//!
//! | kind                | parameters                                  | value at `(t, x)`                        |
//! |---------------------|---------------------------------------------|------------------------------------------|
//! | `constant`          | `value`                                     | `value`                                  |
//! | `linear_in_t`       | `value`, `rate`                             | `value + t rate`                         |
//! | `radial_deviatoric` | `magnitude`, `rate` (0), `direction` (diag(1,-1)) | `(magnitude + t rate) dev(direction)` |
//! | `gaussian_bump`     | `base` (0), `amplitude`, `center`, `width`  | `base + amplitude exp(-|x-c|^2 / 2w^2)`  |
//!
//! Values are numbers for `g`, `[x, y]` for `f` and `v0`, and row lists for
//! tensors. `radial_deviatoric` is tensor-only. A top-level `scenario` names a
//! preset whose fields are overridden by the rest of the file.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;
use serde_json::{json, Value};
use thiserror::Error;
use vmsweep::fem::{Side, SideSet};
use vmsweep::stepper::{
    MeshConfig, Mode, ProblemSpec, Scheme, ScalarFn, SolverSettings, StepError, Stepper, TensorFn, VectorFn,
};
use vmsweep::SymMat;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("{0}")]
    Parse(#[from] serde_json::Error),
    #[error("{}field `{field}`: {message}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    Invalid { field: String, line: Option<usize>, message: String },
    #[error("unknown scenario '{0}' (expected one of: {list})", list = SCENARIOS.join(", "))]
    UnknownScenario(String),
}

pub const SCENARIOS: [&str; 5] = ["s2", "radial_0d", "growing_yield_0d", "rest", "explicit_blowup"];

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    #[default]
    Fem,
    Pointwise,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    #[default]
    Projection,
    Implicit,
    Explicit,
}

impl From<SchemeName> for Scheme {
    fn from(s: SchemeName) -> Scheme {
        match s {
            SchemeName::Projection => Scheme::Projection,
            SchemeName::Implicit => Scheme::Implicit,
            SchemeName::Explicit => Scheme::Explicit,
        }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum Param {
    Number(f64),
    Vector(Vec<f64>),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FnSpec {
    Constant {
        value: Param,
    },
    LinearInT {
        value: Param,
        rate: Param,
    },
    RadialDeviatoric {
        magnitude: f64,
        #[serde(default)]
        rate: f64,
        #[serde(default)]
        direction: Option<Param>,
    },
    GaussianBump {
        #[serde(default)]
        base: Option<Param>,
        amplitude: Param,
        center: [f64; 2],
        width: f64,
    },
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MeshSpec {
    pub nx: usize,
    pub ny: usize,
    #[serde(default = "one")]
    pub lx: f64,
    #[serde(default = "one")]
    pub ly: f64,
    pub gamma1: Vec<String>,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub f: Option<FnSpec>,
    pub h: Option<FnSpec>,
    pub p: Option<FnSpec>,
    pub g: Option<FnSpec>,
    pub v0: Option<FnSpec>,
    pub sigma0: Option<FnSpec>,
    /// Prescribed `E(v)` in pointwise mode.
    pub strain_rate: Option<FnSpec>,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSpec {
    pub cg_tol: f64,
    pub cg_max_iter: usize,
    pub fp_tol: f64,
    pub fp_max_iter: usize,
}

impl Default for SolverSpec {
    fn default() -> Self {
        let s = SolverSettings::default();
        Self { cg_tol: s.cg_tol, cg_max_iter: s.cg_max_iter, fp_tol: s.fp_tol, fp_max_iter: s.fp_max_iter }
    }
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    /// Write `snapshot_NNNNN.vtk` every this many steps (and at the last step); 0 disables.
    pub snapshot_stride: usize,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct StudySpec {
    /// Step counts of a stability or convergence sweep, strictly increasing.
    pub n_list: Vec<usize>,
    /// Step count of the convergence reference run.
    pub n_ref: Option<usize>,
    /// Inverse-iteration sweeps for the Korn constant estimate.
    pub korn_iterations: usize,
}

impl Default for StudySpec {
    fn default() -> Self {
        Self { n_list: Vec::new(), n_ref: None, korn_iterations: 60 }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySpec {
    /// Random cases per dimension for the projection and chart suites.
    pub samples: usize,
    pub oracle_cases: usize,
    pub oracle_samples: usize,
    pub inclusion_setups: usize,
    pub inclusion_witnesses: usize,
    /// Bound for absolute violations (inequalities).
    pub tol_abs: f64,
    /// Bound for relative violations (identities).
    pub tol_rel: f64,
    /// Run the non-gating explicit-scheme demonstration.
    pub explicit_demo: bool,
}

impl Default for VerifySpec {
    fn default() -> Self {
        Self {
            samples: 10_000,
            oracle_cases: 100,
            oracle_samples: 100_000,
            inclusion_setups: 1_000,
            inclusion_witnesses: 100,
            tol_abs: 1e-10,
            tol_rel: 1e-12,
            explicit_demo: true,
        }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    #[serde(default)]
    pub mode: ModeName,
    #[serde(default = "two")]
    pub dim: usize,
    #[serde(default)]
    pub mesh: Option<MeshSpec>,
    pub nu: f64,
    pub t_final: f64,
    pub n_steps: usize,
    #[serde(default)]
    pub scheme: SchemeName,
    #[serde(default)]
    pub data: DataSpec,
    #[serde(default = "four")]
    pub time_quad: usize,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub study: StudySpec,
    #[serde(default)]
    pub verify: VerifySpec,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

fn two() -> usize {
    2
}

fn four() -> usize {
    4
}

/// A parsed and validated configuration.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub raw: RawConfig,
    pub spec: ProblemSpec,
    pub scheme: Scheme,
}

impl RunConfig {
    pub fn seed(&self) -> u64 {
        self.raw.seed
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.raw.seed = seed;
        self
    }
}

/// Preset fields of a named scenario.
pub fn scenario(name: &str) -> Result<Value, ConfigError> {
    let radial = json!({"kind": "radial_deviatoric", "magnitude": 1.0});
    let v = match name {
        "s2" => json!({
            "mode": "fem",
            "mesh": {"nx": 16, "ny": 16, "lx": 1.0, "ly": 1.0, "gamma1": ["left"]},
            "nu": 1.0, "t_final": 1.0, "n_steps": 200,
            "data": {"f": {"kind": "constant", "value": [0.0, -4.0]}, "g": {"kind": "constant", "value": 1.0}},
        }),
        "radial_0d" => json!({
            "mode": "pointwise", "dim": 2, "nu": 1.0, "t_final": 2.0, "n_steps": 2000,
            "data": {"h": radial, "g": {"kind": "constant", "value": 1.0}},
        }),
        "growing_yield_0d" => json!({
            "mode": "pointwise", "dim": 2, "nu": 1.0, "t_final": 4.0, "n_steps": 2000,
            "data": {"h": radial, "g": {"kind": "linear_in_t", "value": 1.0, "rate": 1.0}},
        }),
        "rest" => json!({
            "mode": "fem",
            "mesh": {"nx": 4, "ny": 4, "lx": 1.0, "ly": 1.0, "gamma1": ["left"]},
            "nu": 1.0, "t_final": 1.0, "n_steps": 10,
        }),
        "explicit_blowup" => json!({
            "mode": "fem",
            "mesh": {"nx": 8, "ny": 8, "lx": 1.0, "ly": 1.0, "gamma1": ["left"]},
            "nu": 1e-3, "t_final": 2.0, "n_steps": 4, "scheme": "explicit",
            "data": {"f": {"kind": "constant", "value": [0.0, -1.0]}, "g": {"kind": "constant", "value": 1e6}},
        }),
        other => return Err(ConfigError::UnknownScenario(other.to_string())),
    };
    Ok(v)
}

/// Overwrites `base` with `over`, recursing into objects.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut value: Value = serde_json::from_str(text)?;
    let preset = match value.as_object_mut().and_then(|o| o.remove("scenario")) {
        None => None,
        Some(Value::String(name)) => Some(scenario(&name)?),
        Some(_) => return Err(invalid(text, "scenario", "must be a string")),
    };
    let raw: RawConfig = match preset {
        // Straight from the text so serde errors carry line numbers.
        None => serde_json::from_str(text)?,
        Some(mut base) => {
            merge(&mut base, value);
            serde_json::from_value(base)?
        }
    };
    build(raw, text)
}

fn line_of(text: &str, field: &str) -> Option<usize> {
    let key = field.rsplit('.').next().unwrap_or(field);
    let needle = format!("\"{key}\"");
    text.lines().position(|l| l.contains(&needle)).map(|i| i + 1)
}

fn invalid(text: &str, field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.to_string(), line: line_of(text, field), message: message.into() }
}

fn build(raw: RawConfig, text: &str) -> Result<RunConfig, ConfigError> {
    let err = |field: &str, msg: String| invalid(text, field, msg);
    if !(raw.nu > 0.0 && raw.nu.is_finite()) {
        return Err(err("nu", format!("must be positive, got {}", raw.nu)));
    }
    if !(raw.t_final > 0.0 && raw.t_final.is_finite()) {
        return Err(err("t_final", format!("must be positive, got {}", raw.t_final)));
    }
    if raw.n_steps == 0 {
        return Err(err("n_steps", "must be at least 1".into()));
    }
    if raw.time_quad == 0 {
        return Err(err("time_quad", "must be at least 1".into()));
    }
    let s = &raw.solver;
    if !(s.cg_tol > 0.0) || !(s.fp_tol > 0.0) || s.cg_max_iter == 0 || s.fp_max_iter == 0 {
        return Err(err("solver", "tolerances and iteration caps must be positive".into()));
    }
    let dim = match raw.mode {
        ModeName::Fem => 2,
        ModeName::Pointwise => raw.dim,
    };
    if !(dim == 2 || dim == 3) {
        return Err(err("dim", format!("must be 2 or 3, got {dim}")));
    }
    validate_study(&raw.study, text)?;

    let d = &raw.data;
    let strain_rate = tensor_fn(d.strain_rate.as_ref(), dim, "data.strain_rate", text)?;
    let mode = match raw.mode {
        ModeName::Fem => {
            if d.strain_rate.is_some() {
                return Err(err("data.strain_rate", "only used in pointwise mode".into()));
            }
            let m = raw.mesh.as_ref().ok_or_else(|| err("mesh", "required in fem mode".into()))?;
            if m.nx == 0 || m.ny == 0 {
                return Err(err("mesh", "nx and ny must be at least 1".into()));
            }
            if !(m.lx > 0.0 && m.ly > 0.0) {
                return Err(err("mesh", "lx and ly must be positive".into()));
            }
            if m.gamma1.is_empty() {
                return Err(err("gamma1", "needs at least one side".into()));
            }
            let gamma1 = m
                .gamma1
                .iter()
                .map(|s| s.parse::<Side>().map_err(|e| err("gamma1", e.to_string())))
                .collect::<Result<SideSet, _>>()?;
            Mode::Fem(MeshConfig { nx: m.nx, ny: m.ny, lx: m.lx, ly: m.ly, gamma1 })
        }
        ModeName::Pointwise => Mode::Pointwise { dim, strain_rate },
    };

    let mut spec = ProblemSpec::new(mode, raw.nu, raw.t_final, raw.n_steps);
    spec.time_quad = raw.time_quad;
    spec.solver = SolverSettings { cg_tol: s.cg_tol, cg_max_iter: s.cg_max_iter, fp_tol: s.fp_tol, fp_max_iter: s.fp_max_iter };
    if let Some(f) = &d.f {
        spec.f = vector_fn(f, "data.f", text)?;
    }
    if let Some(v0) = &d.v0 {
        spec.v0 = vector_fn(v0, "data.v0", text)?;
    }
    spec.h = tensor_fn(d.h.as_ref(), dim, "data.h", text)?;
    spec.p = tensor_fn(d.p.as_ref(), dim, "data.p", text)?;
    spec.sigma0 = tensor_fn(d.sigma0.as_ref(), dim, "data.sigma0", text)?;
    if let Some(g) = &d.g {
        check_nonnegative_yield(g, raw.t_final).map_err(|m| err("data.g", m))?;
        spec.g = scalar_fn(g, "data.g", text)?;
    }

    let stepper = Stepper::new(&spec, raw.scheme.into()).map_err(|e| err("data", e.to_string()))?;
    match stepper.initial_state() {
        Ok(_) => {}
        Err(e @ StepError::InfeasibleInitialStress { .. }) => return Err(err("data.sigma0", e.to_string())),
        Err(e @ StepError::NegativeYield { .. }) => return Err(err("data.g", e.to_string())),
        Err(e) => return Err(err("data", e.to_string())),
    }
    let scheme = raw.scheme.into();
    Ok(RunConfig { raw, spec, scheme })
}

fn validate_study(study: &StudySpec, text: &str) -> Result<(), ConfigError> {
    if study.n_list.iter().any(|&n| n == 0) {
        return Err(invalid(text, "study.n_list", "step counts must be at least 1"));
    }
    if study.n_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid(text, "study.n_list", "step counts must be strictly increasing (time steps strictly decreasing)"));
    }
    if let Some(n_ref) = study.n_ref {
        if let Some(&max) = study.n_list.iter().max() {
            if n_ref <= max {
                return Err(invalid(text, "study.n_ref", format!("reference run ({n_ref} steps) must be strictly finer than every study run (max {max})")));
            }
        }
    }
    if study.korn_iterations == 0 {
        return Err(invalid(text, "study.korn_iterations", "must be at least 1"));
    }
    Ok(())
}

/// Rejects yield bounds that go negative somewhere on `[0, T]`.
fn check_nonnegative_yield(g: &FnSpec, t_final: f64) -> Result<(), String> {
    let num = |p: &Param| match p {
        Param::Number(x) => Ok(*x),
        _ => Err("yield bound parameters must be numbers".to_string()),
    };
    let lows = match g {
        FnSpec::Constant { value } => vec![num(value)?],
        FnSpec::LinearInT { value, rate } => {
            let (a, b) = (num(value)?, num(rate)?);
            vec![a, a + b * t_final]
        }
        FnSpec::GaussianBump { base, amplitude, .. } => {
            let b = base.as_ref().map(num).transpose()?.unwrap_or(0.0);
            vec![b, b + num(amplitude)?]
        }
        FnSpec::RadialDeviatoric { .. } => return Err("radial_deviatoric is tensor-valued".into()),
    };
    match lows.iter().copied().find(|&v| !(v >= 0.0)) {
        Some(v) => Err(format!("yield bound must stay nonnegative on [0, T], reaches {v}")),
        None => Ok(()),
    }
}

fn gaussian(center: [f64; 2], width: f64) -> impl Fn([f64; 2]) -> f64 + Send + Sync {
    move |x| {
        let r2 = (x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2);
        (-r2 / (2.0 * width * width)).exp()
    }
}

fn check_width(width: f64, field: &str, text: &str) -> Result<(), ConfigError> {
    if width > 0.0 && width.is_finite() {
        Ok(())
    } else {
        Err(invalid(text, field, format!("gaussian_bump width must be positive, got {width}")))
    }
}

fn scalar_fn(spec: &FnSpec, field: &str, text: &str) -> Result<ScalarFn, ConfigError> {
    let num = |p: &Param| match p {
        Param::Number(x) => Ok(*x),
        _ => Err(invalid(text, field, "expected a number")),
    };
    Ok(match spec {
        FnSpec::Constant { value } => {
            let c = num(value)?;
            Arc::new(move |_, _| c)
        }
        FnSpec::LinearInT { value, rate } => {
            let (a, b) = (num(value)?, num(rate)?);
            Arc::new(move |t, _| a + b * t)
        }
        FnSpec::GaussianBump { base, amplitude, center, width } => {
            check_width(*width, field, text)?;
            let b = base.as_ref().map(num).transpose()?.unwrap_or(0.0);
            let a = num(amplitude)?;
            let bump = gaussian(*center, *width);
            Arc::new(move |_, x| b + a * bump(x))
        }
        FnSpec::RadialDeviatoric { .. } => return Err(invalid(text, field, "radial_deviatoric is tensor-valued")),
    })
}

fn vector_fn(spec: &FnSpec, field: &str, text: &str) -> Result<VectorFn, ConfigError> {
    let vec2 = |p: &Param| match p {
        Param::Vector(v) if v.len() == 2 && v.iter().all(|x| x.is_finite()) => Ok([v[0], v[1]]),
        _ => Err(invalid(text, field, "expected a vector [x, y]")),
    };
    Ok(match spec {
        FnSpec::Constant { value } => {
            let c = vec2(value)?;
            Arc::new(move |_, _| c)
        }
        FnSpec::LinearInT { value, rate } => {
            let (a, b) = (vec2(value)?, vec2(rate)?);
            Arc::new(move |t, _| [a[0] + b[0] * t, a[1] + b[1] * t])
        }
        FnSpec::GaussianBump { base, amplitude, center, width } => {
            check_width(*width, field, text)?;
            let b = base.as_ref().map(vec2).transpose()?.unwrap_or([0.0, 0.0]);
            let a = vec2(amplitude)?;
            let bump = gaussian(*center, *width);
            Arc::new(move |_, x| {
                let s = bump(x);
                [b[0] + a[0] * s, b[1] + a[1] * s]
            })
        }
        FnSpec::RadialDeviatoric { .. } => return Err(invalid(text, field, "radial_deviatoric is tensor-valued")),
    })
}

fn tensor_fn(spec: Option<&FnSpec>, dim: usize, field: &str, text: &str) -> Result<TensorFn, ConfigError> {
    let mat = |p: &Param| -> Result<SymMat, ConfigError> {
        let Param::Matrix(rows) = p else {
            return Err(invalid(text, field, format!("expected a {dim}x{dim} matrix as a list of rows")));
        };
        if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
            return Err(invalid(text, field, format!("expected a {dim}x{dim} matrix")));
        }
        SymMat::from_rows(rows).map_err(|e| invalid(text, field, e.to_string()))
    };
    let Some(spec) = spec else {
        let z = SymMat::zeros(dim);
        return Ok(Arc::new(move |_, _| z));
    };
    Ok(match spec {
        FnSpec::Constant { value } => {
            let c = mat(value)?;
            Arc::new(move |_, _| c)
        }
        FnSpec::LinearInT { value, rate } => {
            let (a, b) = (mat(value)?, mat(rate)?);
            Arc::new(move |t, _| a + b * t)
        }
        FnSpec::RadialDeviatoric { magnitude, rate, direction } => {
            let dir = match direction {
                Some(p) => mat(p)?,
                None => {
                    let mut diag = vec![0.0; dim];
                    diag[0] = 1.0;
                    diag[1] = -1.0;
                    SymMat::diag(&diag).expect("dim checked")
                }
            }
            .deviator();
            let (a, b) = (*magnitude, *rate);
            Arc::new(move |t, _| dir * (a + b * t))
        }
        FnSpec::GaussianBump { base, amplitude, center, width } => {
            check_width(*width, field, text)?;
            let b = base.as_ref().map(mat).transpose()?.unwrap_or(SymMat::zeros(dim));
            let a = mat(amplitude)?;
            let bump = gaussian(*center, *width);
            Arc::new(move |_, x| b + a * bump(x))
        }
    })
}
