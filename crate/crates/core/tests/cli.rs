use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use riccati_nav::scenario::{metrics_from_csv, preset, run_scenario, write_outputs, CSV_HEADER};

fn cli(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_riccati-nav"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn json(bytes: &[u8]) -> serde_json::Value {
    serde_json::from_slice(bytes).expect("machine-readable output")
}

fn short_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("scenario.toml");
    fs::write(&path, format!("preset = \"paper-fig3\"\nt_end = 2.0\ndt = 0.002\n{extra}")).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn run_writes_outputs_and_reports_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), "");
    let out = cli(&["run", &cfg, "--variant", "decoupled", "--out", "res", "--seed", "5"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&out.stdout);
    assert_eq!(report["metrics"]["variant"], "decoupled");
    assert_eq!(report["metrics"]["seed"], 5);
    assert_eq!(report["metrics"]["tracking"]["samples"], 1001);
    let csv = fs::read_to_string(dir.path().join("res/timeseries.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), CSV_HEADER.join(","));
    assert!(dir.path().join("res/metrics.json").exists());
}

#[test]
fn failures_are_machine_readable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), "[observer]\nx0 = [1.0]\n");
    let out = cli(&["run", &cfg], dir.path());
    assert!(!out.status.success());
    let err = json(&out.stderr);
    assert_eq!(err["error"]["kind"], "config");
    assert!(err["error"]["message"].as_str().unwrap().contains("observer.x0"));

    let out = cli(&["pe-audit", "--preset", "radial", "--delta", "0"], dir.path());
    assert!(!out.status.success());
    assert_eq!(json(&out.stderr)["error"]["kind"], "invalid_argument");

    let out = cli(&["run", "missing.toml"], dir.path());
    assert!(!out.status.success());
    assert_eq!(json(&out.stderr)["error"]["kind"], "io");

    let out = cli(&["run", "--preset", "nope"], dir.path());
    assert_eq!(json(&out.stderr)["error"]["kind"], "config");
}

#[test]
fn pe_audit_separates_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let eight = json(&cli(&["pe-audit", "--preset", "paper-fig3", "--delta", "2"], dir.path()).stdout);
    assert!(eight["min_mu"].as_f64().unwrap() > 1e-2);
    assert_eq!(eight["pe_satisfied"], true);
    let radial = json(&cli(&["pe-audit", "--preset", "radial", "--delta", "2"], dir.path()).stdout);
    assert!(radial["min_mu"].as_f64().unwrap().abs() < 1e-6);
    assert_eq!(radial["pe_satisfied"], false);
}

#[test]
fn fixed_seed_reruns_give_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), "[noise]\nomega = 1e-4\naccel = 1e-3\nbearing = 1e-4\n");
    for out in ["a", "b"] {
        assert!(cli(&["run", &cfg, "--out", out, "--seed", "11"], dir.path()).status.success());
    }
    assert!(cli(&["run", &cfg, "--out", "c", "--seed", "12"], dir.path()).status.success());
    let read = |d: &str| fs::read(dir.path().join(d).join("timeseries.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
}

#[test]
fn metrics_round_trip_through_csv() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = preset("paper-fig3").unwrap();
    cfg.noise.magnetometer = 0.0;
    cfg.t_end = 12.0;
    let run = run_scenario(&cfg).unwrap();
    let (csv, _) = write_outputs(&run, dir.path()).unwrap();
    assert_eq!(metrics_from_csv(&csv, &cfg.metrics).unwrap(), run.metrics.tracking);
    assert!(run.metrics.tracking.converged);
}

#[test]
fn zero_motion_does_not_converge() {
    let run = run_scenario(&preset("stationary").unwrap()).unwrap();
    assert!(!run.metrics.tracking.converged);
    let pe = run.metrics.pe.unwrap();
    assert!(pe.min_mu.abs() < 1e-9 && !pe.pe_satisfied);
}

#[test]
fn shipped_scenarios_load() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut count = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            riccati_nav::scenario::load_scenario(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            count += 1;
        }
    }
    assert!(count >= 3);
}
