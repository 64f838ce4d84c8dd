use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bpre(args: &[&str], workers: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_bpre"));
    cmd.args(args).env_remove("BPRE_WORKERS");
    if let Some(w) = workers {
        cmd.env("BPRE_WORKERS", w);
    }
    cmd.output().expect("bpre runs")
}

fn config_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

const MODEL: &str = r#"{"atoms": [
    {"law": {"family": "shifted_geometric", "mean": 2.718281828459045}, "prob": 0.5},
    {"law": {"family": "shifted_geometric", "mean": 7.38905609893065}, "prob": 0.5}]}"#;

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn validate_writes_csv_to_stdout() {
    let cfg = config_dir().join("validate.json");
    let out = bpre(&["validate", "--config", cfg.to_str().unwrap()], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("condition,holds,value,detail"));
    assert!(lines.next().unwrap().starts_with("# config_hash="));
    assert_eq!(lines.count(), 9);
}

#[test]
fn identical_runs_are_byte_identical_across_workers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "sim.json",
        &format!(r#"{{"seed": 3, "replications": 300, "n": 60, "model": {MODEL}}}"#),
    );
    let mut outputs = Vec::new();
    for workers in ["1", "4", "8"] {
        let out = dir.path().join(format!("out{workers}.csv"));
        let status = bpre(
            &["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()],
            Some(workers),
        )
        .status;
        assert!(status.success());
        outputs.push(std::fs::read(out).unwrap());
    }
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));
    assert_eq!(String::from_utf8_lossy(&outputs[0]).lines().count(), 302);
}

#[test]
fn seed_flag_changes_the_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "sim.json",
        &format!(r#"{{"seed": 3, "replications": 20, "n": 10, "model": {MODEL}}}"#),
    );
    let path = cfg.to_str().unwrap();
    let a = bpre(&["simulate", "--config", path], None).stdout;
    let b = bpre(&["simulate", "--config", path, "--seed", "4"], None).stdout;
    assert_ne!(a, b);
    assert!(String::from_utf8_lossy(&b).contains("seed=4"));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let malformed = write_config(dir.path(), "bad.json", "{\"seed\": 1,");
    let out = bpre(&["simulate", "--config", malformed.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line"));

    let degenerate = write_config(
        dir.path(),
        "single.json",
        r#"{"seed": 1, "replications": 5, "n": 5,
            "model": {"atoms": [{"law": {"family": "shifted_poisson", "rate": 1.0}, "prob": 1.0}]}}"#,
    );
    let out = bpre(&["validate", "--config", degenerate.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-degenerate σ² required"));

    let missing = dir.path().join("absent.json");
    assert_eq!(bpre(&["simulate", "--config", missing.to_str().unwrap()], None).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "wtail.json",
        &format!(r#"{{"seed": 1, "replications": 50, "n": 20, "t_grid": [1e5, 1e6, 1e7], "model": {MODEL}}}"#),
    );
    let out = bpre(&["wtail", "--config", cfg.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(3));

    let ok = config_dir().join("validate.json");
    let unwritable = "/nonexistent-dir/out.csv";
    let out = bpre(&["validate", "--config", ok.to_str().unwrap(), "--out", unwritable], None);
    assert_eq!(out.status.code(), Some(3));
}
