use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn vmsweep(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vmsweep")).args(args).output().unwrap()
}

fn run_cmd(cmd: &str, config: &Path, out: &Path) -> Output {
    vmsweep(&[cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()])
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(|c| c.parse::<f64>().unwrap()).collect()).collect();
    (header, rows)
}

#[test]
fn rest_state_writes_zero_norms() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "rest.json", r#"{"scenario": "rest", "output": {"snapshot_stride": 5}}"#);
    let out = dir.path().join("out");
    let o = run_cmd("run", &cfg, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = csv_rows(&out.join("norms.csv"));
    assert_eq!(header, ["n", "t", "v_norm_h", "sigma_norm_h", "yield_slack", "cg_iterations"]);
    assert_eq!(rows.len(), 11);
    for r in &rows {
        assert_eq!((r[2], r[3], r[5]), (0.0, 0.0, 0.0));
        assert_eq!(r[4], 1.0);
    }
    for n in [0, 5, 10] {
        let vtk = fs::read_to_string(out.join(format!("snapshot_{n:05}.vtk"))).unwrap();
        assert!(vtk.starts_with("# vtk DataFile Version 3.0"));
        assert!(vtk.contains("TENSORS sigma double") && vtk.contains("VECTORS velocity double"));
    }
    assert!(!out.join("snapshot_00003.vtk").exists());
}

#[test]
fn single_step_gives_two_rows_and_feasible_slack() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "one.json", r#"{"scenario": "s2", "mesh": {"nx": 6, "ny": 6}, "n_steps": 1}"#);
    let out = dir.path().join("out");
    assert!(run_cmd("run", &cfg, &out).status.success());
    let (_, rows) = csv_rows(&out.join("norms.csv"));
    assert_eq!(rows.len(), 2);
    assert_eq!((rows[0][0], rows[1][0]), (0.0, 1.0));

    let cfg = write_config(dir.path(), "many.json", r#"{"scenario": "s2", "mesh": {"nx": 6, "ny": 6}, "n_steps": 30}"#);
    assert!(run_cmd("run", &cfg, &out).status.success());
    let (_, rows) = csv_rows(&out.join("norms.csv"));
    assert!(rows.iter().all(|r| r[4] >= -1e-10 && r.iter().all(|c| c.is_finite())));
    assert!(rows.iter().any(|r| r[4].abs() < 1e-12), "load never reaches the yield surface");
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let missing = dir.path().join("nope.json");
    assert_eq!(run_cmd("run", &missing, &out).status.code(), Some(2));

    let cfg = write_config(dir.path(), "bad.json", "{\n  \"mode\": \"pointwise\",\n  \"t_final\": 1.0,\n  \"n_steps\": 4\n}");
    let o = run_cmd("run", &cfg, &out);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("nu") && err.contains("line"), "{err}");

    let cfg = write_config(dir.path(), "order.json", r#"{"scenario": "s2", "study": {"n_list": [20, 10]}}"#);
    assert_eq!(run_cmd("stability", &cfg, &out).status.code(), Some(2));

    let cfg = write_config(dir.path(), "ref.json", r#"{"scenario": "s2", "study": {"n_list": [10, 20], "n_ref": 20}}"#);
    assert_eq!(run_cmd("convergence", &cfg, &out).status.code(), Some(2));

    assert_eq!(vmsweep(&["run", "--out", "x"]).status.code(), Some(2));
}

fn quick_verify(extra: &str) -> String {
    format!(
        r#"{{"scenario": "rest", "verify": {{"samples": 300, "oracle_cases": 4, "oracle_samples": 3000,
            "inclusion_setups": 40, "inclusion_witnesses": 20, "explicit_demo": false{extra}}}}}"#
    )
}

#[test]
fn verify_exit_status_tracks_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let good = write_config(dir.path(), "good.json", &quick_verify(""));
    let o = run_cmd("verify", &good, &out);
    assert_eq!(o.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&o.stdout);
    for item in ["phi_i_", "phi_ii_", "phi_iii_", "phi_iv_"] {
        assert_eq!(stdout.lines().filter(|l| l.starts_with(item)).count(), 1, "{item}");
    }
    let bad = write_config(dir.path(), "bad.json", &quick_verify(r#", "tol_abs": -1.0"#));
    assert_eq!(run_cmd("verify", &bad, &out).status.code(), Some(1));
    let text = fs::read_to_string(out.join("verify.csv")).unwrap();
    assert!(text.starts_with("suite,cases,max_violation,tolerance,gating,status\n"));
    assert!(text.contains(",fail\n"));
}

#[test]
fn seed_flag_changes_verify_samples_only_when_given() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "v.json", &quick_verify(""));
    let read = |seed: Option<&str>, sub: &str| {
        let out = dir.path().join(sub);
        let mut args = vec!["verify", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
        if let Some(s) = seed {
            args.extend(["--seed", s]);
        }
        assert!(vmsweep(&args).status.success());
        fs::read(out.join("verify.csv")).unwrap()
    };
    assert_eq!(read(Some("5"), "a"), read(Some("5"), "b"));
    assert_ne!(read(Some("5"), "c"), read(Some("6"), "d"));
}

#[test]
fn study_outputs_have_frozen_headers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "s.json",
        r#"{"scenario": "s2", "mesh": {"nx": 4, "ny": 4}, "study": {"n_list": [5, 10], "n_ref": 40, "korn_iterations": 20}}"#,
    );
    let out = dir.path().join("out");
    assert!(run_cmd("stability", &cfg, &out).status.success());
    assert!(run_cmd("convergence", &cfg, &out).status.success());
    let (h, rows) = csv_rows(&out.join("stability.csv"));
    assert_eq!(h.len(), 16);
    assert_eq!(h[0], "n_steps");
    assert!(rows.iter().flatten().all(|c| c.is_finite()));
    let (h, rows) = csv_rows(&out.join("convergence.csv"));
    assert_eq!(h, ["n_steps", "dt", "err_sigma_linf_h", "err_v_linf_h", "err_v_l2_v"]);
    assert_eq!(rows.len(), 2);
    let slopes = fs::read_to_string(out.join("stability_slopes.csv")).unwrap();
    assert!(slopes.starts_with("quantity,slope\n"));
    let orders = fs::read_to_string(out.join("convergence_orders.csv")).unwrap();
    assert!(orders.starts_with("quantity,n_coarse,n_fine,order\n"));
}
