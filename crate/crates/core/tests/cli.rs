//! End-to-end runs of the `raman-squeeze` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_raman-squeeze");

fn bundled() -> Value {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/default.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn write_config(dir: &Path, name: &str, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let mut v = bundled();
    edit(&mut v);
    let path = dir.join(name);
    std::fs::write(&path, v.to_string()).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("RAMAN_SQUEEZE_WORKERS", "1")
        .output()
        .unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn derive_reports_the_raman_rate() {
    let out = run(&["derive"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let theta1 = v["given"]["theta1_over_2pi_hz"].as_f64().unwrap();
    assert!((theta1 - 2000.0).abs() < 1e-9);
}

#[test]
fn zero_detuning_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.json", |v| v["delta1_hz"] = 0.0.into());
    let out = run(&["derive", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("delta1 must be nonzero"));
}

#[test]
fn unknown_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.json", |v| v["omega3_hz"] = 1.0.into());
    let out = run(&["derive", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("omega3_hz"));
}

#[test]
fn equal_rates_are_a_hard_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "equal.json", |v| {
        v["omega2_hz"] = 80000.0.into()
    });
    let out = run(&["derive", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("degenerate channel"));
}

#[test]
fn seeded_simulate_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for path in [&a, &b] {
        let out = run(&["simulate", "--seed", "7", "--out", path.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    }
    let (ca, cb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(!ca.is_empty());
    assert_eq!(ca, cb);
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("a.report.json")).unwrap())
            .unwrap();
    assert_eq!(report["seed"], 7);
}

#[test]
fn fig2_writes_csv_and_svg() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("fig2.csv");
    let svg = dir.path().join("fig2.svg");
    let out = run(&[
        "fig2",
        "--r-values",
        "0.5,0.8,0.95",
        "--out",
        csv.to_str().unwrap(),
        "--svg",
        svg.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "r,n_bar,gamma,T_per_step,total_time_2T");
    assert_eq!(lines.len(), 4);
    assert!(std::fs::read_to_string(&svg).unwrap().starts_with("<svg"));
}

#[test]
fn sweep_over_gamma_t() {
    let out = run(&["sweep", "--param", "gamma-t", "--values", "4,8"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn validate_with_zero_tolerance_fails() {
    let out = run(&["validate", "--tol-scale", "0"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("FAIL"));
}
