use std::process::{Command, Output};

use serde_json::Value;

const BENCH: &str = r#"{"type":"discrete","atoms":[[-2,"3/4"],[1,"1/4"]]}"#;

fn lobtree(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lobtree")).args(args).output().unwrap()
}

fn error_of(out: &Output) -> Value {
    assert!(!out.status.success());
    let text = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(text.lines().count(), 1, "{text}");
    serde_json::from_str(text.trim()).unwrap()
}

#[test]
fn bad_probabilities_are_reported_as_json() {
    let out = lobtree(&["classify", "--p", "1", "--dist", BENCH, "--seed", "1"]);
    let e = error_of(&out);
    assert_eq!(e["error"], "config");
    assert!(e["message"].as_str().unwrap().contains("p must lie in (0,1)"));

    let bad = r#"{"type":"discrete","atoms":[[-1,0.5],[1,0.49]]}"#;
    let e = error_of(&lobtree(&["classify", "--p", "0.7", "--dist", bad, "--seed", "1"]));
    assert!(e["message"].as_str().unwrap().starts_with("dist:"));
}

#[test]
fn missing_seed_and_unknown_flags_fail() {
    let e = error_of(&lobtree(&["simulate", "--p", "0.7", "--dist", BENCH]));
    assert!(e["message"].as_str().unwrap().contains("seed"));
    let e = error_of(&lobtree(&["simulate", "--p", "0.7", "--dist", BENCH, "--seed", "1", "--bogus", "2"]));
    assert_eq!(e["error"], "config");
}

#[test]
fn config_file_overrides_flags_and_sidecar_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, format!(r#"{{"p":"3/4","horizon":50,"dist":{BENCH}}}"#)).unwrap();
    let out = dir.path().join("traj.csv");
    let status = lobtree(&[
        "simulate",
        "--p",
        "0.6",
        "--seed",
        "4",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    assert!(status.stdout.is_empty());
    let csv = std::fs::read_to_string(&out).unwrap();
    assert_eq!(csv.lines().count(), 52);
    assert_eq!(csv.lines().next(), Some("step,price,mass"));

    let meta: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("traj.csv.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 4);
    assert_eq!(meta["config"]["horizon"], 50);
    assert_eq!(meta["configHash"].as_str().unwrap().len(), 64);
    assert!(meta["version"].as_str().unwrap().starts_with("lobtree "));

    // Same run from flags only gives the same bytes and the same hash.
    let direct = lobtree(&["simulate", "--p", "3/4", "--horizon", "50", "--seed", "4", "--dist", BENCH]);
    assert_eq!(direct.stdout, csv.as_bytes());
}

#[test]
fn survival_csv_columns() {
    let out = lobtree(&[
        "survival", "--p", "0.75", "--dist", BENCH, "--seed", "2", "--depth", "2,4", "--replicas", "200", "--clip", "1",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "p,K,d,q_d,ci95,budgetFraction");
    assert!(lines[1].starts_with("0.75,1,2,"));
    assert_eq!(lines.len(), 3);
}
