use std::path::Path;
use std::process::{Command, Output};

fn tbcsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tbcsim")).args(args).output().expect("spawn tbcsim")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn run_builtin_writes_traces_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = tbcsim(&["run", "--scenario", "evade_sphere", "--out", out.to_str().unwrap(), "--override", "duration=1.0"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["trace.csv", "commands.csv", "timing.csv", "scenario.toml", "summary.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["safety_ok"], true);

    let o = tbcsim(&["summarize", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let again: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(again["min_h"], summary["min_h"]);
}

#[test]
fn config_problems_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let out = out.to_str().unwrap();
    assert_eq!(code(&tbcsim(&["run", "--scenario", "no_such_scenario", "--out", out])), 2);
    assert_eq!(code(&tbcsim(&["run", "--scenario", "head_on", "--out", out, "--override", "filter.beta=-1"])), 2);
    assert_eq!(code(&tbcsim(&["run", "--scenario", "head_on", "--out", out, "--override", "garbage"])), 2);

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "duration = 1.0\n[world]\ncenter = [0, 0]\n").unwrap();
    assert_eq!(code(&tbcsim(&["run", "--scenario", bad.to_str().unwrap(), "--out", out])), 2);
    assert!(!Path::new(out).join("trace.csv").exists());
}

#[test]
fn safety_violation_exits_with_three() {
    // A sharp regulation function hands the pilot too much authority at
    // this control rate and the geofence is breached.
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("unsafe");
    let o = tbcsim(&["run", "--scenario", "carry_on_box", "--out", out.to_str().unwrap(), "--override", "filter.beta=30"]);
    assert_eq!(code(&o), 3);
    assert!(out.join("trace.csv").exists());
}

#[test]
fn list_builtins_names_all_scenarios() {
    let o = tbcsim(&["list-builtins"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    for name in ["carry_on_box", "evade_sphere", "switching", "head_on"] {
        assert!(text.contains(name), "{name} not listed");
    }
}

#[test]
fn oracle_reports_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("oracle.json");
    let o = tbcsim(&["oracle", "--toy", "truck", "--grid", "40x30", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(r["counts"]["cells"], 1200);
    assert_eq!(r["counts"]["violations"], 0);
    assert_eq!(code(&tbcsim(&["oracle", "--grid", "40by30"])), 2);
    assert_eq!(code(&tbcsim(&["oracle", "--grid", "10x10", "--maneuver-time", "-1"])), 2);
}

#[test]
fn replay_reproduces_a_batch_run() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let o = tbcsim(&["run", "--scenario", "switching", "--out", a.to_str().unwrap(), "--override", "duration=1.5"]);
    assert_eq!(code(&o), 0);
    let o = tbcsim(&["replay", a.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read(a.join("trace.csv")).unwrap(), std::fs::read(b.join("trace.csv")).unwrap());
}
