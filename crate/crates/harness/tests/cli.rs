//! The `grfmhe` binary end to end: exit codes, persisted logs and report regeneration.

use std::collections::HashMap;
use std::path::Path;
use std::process::{Command, Output};

use grfmhe_harness::io;

fn grfmhe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_grfmhe")).args(args).output().expect("run grfmhe")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const SHORT: &str = "[scenario]\nduration = 2.0\nseed = 5\n";

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "[scenario]\nduraton = 2.0\n");
    let out = grfmhe(&["bench", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("duraton"));
}

#[test]
fn invalid_values_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("o");
    let zero = write(dir.path(), "zero.toml", "[scenario]\nduration = 0.0\n");
    assert_eq!(grfmhe(&["simulate", "--config", &zero, "--out", path(&out_dir)]).status.code(), Some(2));
    let cfg = write(dir.path(), "ok.toml", SHORT);
    assert_eq!(grfmhe(&["bench", "--config", &cfg, "--window", "0", "--out", path(&out_dir)]).status.code(), Some(2));
    assert_eq!(grfmhe(&["bench", "--config", &cfg, "--estimators", "ukf", "--out", path(&out_dir)]).status.code(), Some(2));
    assert!(!out_dir.join("report.csv").exists());
}

#[test]
fn single_estimator_report_has_one_row_per_metric() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SHORT);
    let out = dir.path().join("run");
    let res = grfmhe(&["bench", "--config", &cfg, "--estimators", "mhe", "--out", path(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let table = io::Table::read(&out.join("report.csv")).unwrap();
    assert_eq!(table.header, ["estimator", "metric", "value"]);
    let mut seen = HashMap::new();
    for row in &table.rows {
        assert_eq!(row[0], "mhe");
        *seen.entry(row[1].clone()).or_insert(0) += 1;
    }
    assert!(seen.values().all(|n| *n == 1));
    for metric in ["rmse_v", "rmse_f", "rmse_f_left", "rmse_f_right", "violations", "fault"] {
        assert!(seen.contains_key(metric), "{metric}");
    }
    assert!(out.join("estimate_mhe.csv").exists());
    assert!(!out.join("estimate_dkf.csv").exists());
}

#[test]
fn report_regenerates_from_persisted_log() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SHORT);
    let bench = dir.path().join("bench");
    let res = grfmhe(&["bench", "--config", &cfg, "--out", path(&bench)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));

    let log = dir.path().join("log");
    assert!(grfmhe(&["simulate", "--config", &cfg, "--out", path(&log)]).status.success());
    for f in [io::IMU, io::ENCODERS, io::EFFORT, io::CONTACTS, io::VO, io::TRUTH] {
        assert_eq!(std::fs::read(log.join(f)).unwrap(), std::fs::read(bench.join(f)).unwrap(), "{f}");
    }
    let traces = dir.path().join("traces");
    let res = grfmhe(&["estimate", "--config", &cfg, "--log", path(&log), "--out", path(&traces)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let report = dir.path().join("report");
    let res = grfmhe(&["evaluate", "--config", &cfg, "--log", path(&log), "--traces", path(&traces), "--out", path(&report)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(
        std::fs::read(report.join("report.csv")).unwrap(),
        std::fs::read(bench.join("report.csv")).unwrap()
    );
}

#[test]
fn estimator_fault_exits_three_with_partial_output() {
    // A one-legged model cannot consume a two-legged log.
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SHORT);
    let log = dir.path().join("log");
    assert!(grfmhe(&["simulate", "--config", &cfg, "--out", path(&log)]).status.success());
    let model = write(
        dir.path(),
        "hopper.toml",
        "base_mass = 10.0\nbase_inertia = 0.3\n[[legs]]\nname = \"only\"\n\
         [[legs.links]]\nmass = 1.0\ncom_offset = 0.1\ninertia = 0.006\nlength = 0.25\n\
         [[legs.links]]\nmass = 0.5\ncom_offset = 0.12\ninertia = 0.003\nlength = 0.25\n",
    );
    let bad = write(dir.path(), "bad.toml", &format!("[scenario]\nduration = 2.0\nmodel = {model:?}\n"));
    let out = grfmhe(&["estimate", "--config", &bad, "--log", path(&log), "--estimators", "mhe,dkf"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(log.join("estimate_mhe.csv").exists());
    assert!(log.join("estimate_mhe.fault").exists());
    assert!(log.join("estimate_dkf.fault").exists());
}
