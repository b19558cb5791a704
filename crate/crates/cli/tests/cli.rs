use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use storemkt_core::config::{preset, ConfigFile, PRESET_NAMES};

fn storemkt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_storemkt")).args(args).env("STOREMKT_THREADS", "1").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write_config(dir: &Path, name: &str, config: &ConfigFile) -> String {
    let path = dir.join(name);
    fs::write(&path, config.to_json()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn presets_round_trip() {
    for name in PRESET_NAMES {
        let c = preset(name).unwrap();
        assert_eq!(ConfigFile::from_json(&c.to_json()).unwrap(), c, "{name}");
    }
}

#[test]
fn validate_table1() {
    let o = storemkt(&["validate", "table1"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("\"theta_A\""));
}

#[test]
fn validate_reports_fields() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = preset("table1").unwrap();
    c.demand_kwh[2] = -1.0;
    let o = storemkt(&["validate", &write_config(dir.path(), "neg.json", &c)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("demand_kwh[2]"));

    let text = preset("example1").unwrap().to_json().replace("0.19", "0.09");
    let path = dir.path().join("sum.json");
    fs::write(&path, text).unwrap();
    let o = storemkt(&["validate", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sums to"));
}

#[test]
fn unknown_field_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let text = preset("example1").unwrap().to_json().replacen('{', "{\"bogus\": 1,", 1);
    let path = dir.path().join("bogus.json");
    fs::write(&path, text).unwrap();
    assert_eq!(storemkt(&["validate", path.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn infeasible_model_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = preset("example1").unwrap();
    c.demand_kwh = vec![0.0, 5.0];
    let o = storemkt(&["solve", &write_config(dir.path(), "inf.json", &c)]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn solve_example1_with_theta() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("solve.json");
    let o = storemkt(&["solve", "example1", "--theta", "0.21,0.79", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("q* = 2\ng* = [0,1]\n"));
    let art: serde_json::Value = serde_json::from_str(&fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(art["g_star"], serde_json::json!([0.0, 1.0]));
    assert!(art["j_m"].as_f64().unwrap() > 0.0);
    assert!(art["artifact"]["policy"].is_object());
}

#[test]
fn payments_table() {
    let o = storemkt(&["payments", "example1"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(storemkt::PAYMENTS_HEADER));
    assert!(lines.next().unwrap().starts_with("0,-0.09,1.9,"));
}

#[test]
fn identical_evs_pay_identically() {
    let rows = storemkt::payments(&preset("table1").unwrap().problem().unwrap(), &preset("table1").unwrap()).unwrap();
    for r in &rows[1..] {
        assert!((r.p_da - rows[0].p_da).abs() <= 1e-9);
    }
}

#[test]
fn simulate_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let o = storemkt(&["simulate", "example1", "--days", "300", "--seed", "9", "--out", dir.path().to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0));
    }
    for f in ["trace.csv", "ledger.csv", "diagnostics.json"] {
        let x = fs::read(a.path().join(f)).unwrap();
        assert_eq!(x, fs::read(b.path().join(f)).unwrap(), "{f}");
        assert!(!x.is_empty());
    }
    let trace = fs::read_to_string(a.path().join("trace.csv")).unwrap();
    assert!(trace.starts_with("day,kind,ev,"));
    assert_eq!(trace.lines().count(), 1 + 2 * 300);
}

#[test]
fn experiment_example1_artifacts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let o = storemkt(&["experiment", "example1", "--out", dir.path().to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0));
    }
    for f in ["sweep.csv", "checks.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
    }
    let sweep = fs::read_to_string(a.path().join("sweep.csv")).unwrap();
    assert!(sweep.contains("\n0.2,2,0;1\n"));
}

#[test]
fn check_failures_set_exit_code() {
    let o = storemkt(&["experiment", "table1"]);
    let failed = stdout(&o).lines().any(|l| l.starts_with("FAIL "));
    assert_eq!(o.status.code(), Some(if failed { 4 } else { 0 }));
}

#[test]
fn oracle_subcommand() {
    let o = storemkt(&["oracle", "--count", "5", "--seed", "3"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("PASS solver equals brute force"));
}

#[test]
fn bad_thread_count() {
    let o = Command::new(env!("CARGO_BIN_EXE_storemkt"))
        .args(["validate", "example1"])
        .env("STOREMKT_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}
