use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn imfbo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_imfbo")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Preset config made cheap enough for tests.
fn quick_config(args: &[&str]) -> Value {
    let mut all = vec!["config"];
    all.extend_from_slice(args);
    let out = imfbo(&all);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut cfg: Value = serde_json::from_slice(&out.stdout).unwrap();
    cfg["surrogate"]["mcmc"]["warmup"] = json!(60);
    cfg["surrogate"]["mcmc"]["samples"] = json!(30);
    cfg["grid_resolution"] = json!(51);
    cfg
}

fn write(path: &Path, v: &Value) {
    std::fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
}

#[test]
fn run_then_replay() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick_config(&["--preset", "problem1"]);
    cfg["max_iterations"] = json!(4);
    let cfg_path = dir.path().join("cfg.json");
    write(&cfg_path, &cfg);
    let state = dir.path().join("state.json");
    let out = imfbo(&["run", "--config", cfg_path.to_str().unwrap(), "--out", state.to_str().unwrap(), "--mse"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("iterations: 4"), "{text}");
    assert!(text.contains("mse: "), "{text}");

    let out = imfbo(&["replay", "--state", state.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stdout(&out));
    assert!(stdout(&out).starts_with("identical"));

    let mut doc: Value = serde_json::from_str(&std::fs::read_to_string(&state).unwrap()).unwrap();
    doc["history"][1]["y"] = json!(123.0);
    write(&state, &doc);
    let out = imfbo(&["replay", "--state", state.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("iteration 2"));
}

#[test]
fn interactive_run_with_scripted_policy() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick_config(&["--preset", "problem2", "--mode", "interactive", "--seed", "3"]);
    cfg["max_iterations"] = json!(6);
    cfg["stall_window"] = json!(1);
    let cfg_path = dir.path().join("cfg.json");
    write(&cfg_path, &cfg);
    let policy = json!({"rules": [
        {"trigger": {"on": "iteration", "at": 5}, "changes": [{"kind": "force_final_high_fidelity"}]}
    ]});
    let policy_path = dir.path().join("policy.json");
    write(&policy_path, &policy);
    let state = dir.path().join("state.json");
    let out = imfbo(&[
        "run",
        "--config",
        cfg_path.to_str().unwrap(),
        "--policy",
        policy_path.to_str().unwrap(),
        "--out",
        state.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("status: Stopped"), "{}", stdout(&out));
    let out = imfbo(&["replay", "--state", state.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stdout(&out));
}

#[test]
fn baseline_uses_high_fidelity_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    write(&cfg_path, &quick_config(&["--preset", "problem1"]));
    let out = imfbo(&["baseline", "--config", cfg_path.to_str().unwrap(), "--seed", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("suggested: 0 low, 4 high"), "{}", stdout(&out));
}

#[test]
fn invalid_config_is_reported_by_field() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick_config(&["--preset", "problem1"]);
    cfg["init_count"] = json!(1);
    let cfg_path = dir.path().join("cfg.json");
    write(&cfg_path, &cfg);
    let out = imfbo(&["run", "--config", cfg_path.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("init_count"));
}

#[test]
fn scan_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("scan.csv");
    let out = imfbo(&[
        "scan", "--fidelity", "low", "--from", "1.0", "--to", "1.1", "--step", "0.05", "--repeats", "2", "--out",
        csv_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv_path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "J,fidelity,H_c,seed");
    assert_eq!(lines.len(), 1 + 3 * 2);
    assert!(lines[1..].iter().all(|l| l.split(',').nth(2).unwrap().parse::<f64>().unwrap() >= 0.0));

    let cfg_path = dir.path().join("cfg.json");
    write(&cfg_path, &quick_config(&["--preset", "problem1"]));
    let out = imfbo(&["scan", "--config", cfg_path.to_str().unwrap(), "--from", "0", "--to", "1", "--step", "0.5"]);
    let text = stdout(&out);
    assert_eq!(text.lines().next(), Some("x,fidelity,y,seed"));
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn compare_writes_report_and_maps() {
    let dir = tempfile::tempdir().unwrap();
    let mut mf = quick_config(&["--preset", "problem1"]);
    mf["max_iterations"] = json!(2);
    let base = quick_config(&["--preset", "problem1", "--mode", "baseline"]);
    let plan = json!({"entries": [
        {"label": "bo", "config": base, "seeds": [0, 1]},
        {"label": "mfbo", "config": mf, "seeds": [0, 1]}
    ]});
    let plan_path = dir.path().join("plan.json");
    write(&plan_path, &plan);
    let report = dir.path().join("out").join("report.json");
    let args = ["compare", "--plan", plan_path.to_str().unwrap(), "--out", report.to_str().unwrap(), "--workers", "2"];
    let out = imfbo(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let first = std::fs::read_to_string(&report).unwrap();
    let doc: Value = serde_json::from_str(&first).unwrap();
    assert_eq!(doc["rows"].as_array().unwrap().len(), 4);
    let mfbo = doc["summaries"].as_array().unwrap().iter().find(|s| s["label"] == "mfbo").unwrap();
    assert!(mfbo["improvement"].is_number());
    assert!(dir.path().join("out/report_se_maps/mfbo_seed1.csv").exists());
    assert!(dir.path().join("out/report_timings.csv").exists());

    assert!(imfbo(&args).status.success());
    assert_eq!(std::fs::read_to_string(&report).unwrap(), first);
}
