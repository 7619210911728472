use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const HEADER: &str = "trial,seed,n,d,graph_hash,matrix_hash,class,rank,iters,residual_A,residual_MA,spec_radius";

fn spherecons(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spherecons")).args(args).output().expect("binary runs")
}

fn run_ok(args: &[&str]) -> String {
    let out = spherecons(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn summary(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn sweep_is_reproducible_from_the_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    for (dir, seed) in [(&a, "9"), (&b, "9"), (&c, "10")] {
        run_ok(&["sweep", "--seed", seed, "--trials", "40", "--out", dir.to_str().unwrap()]);
    }
    let ra = fs::read_to_string(a.join("records.csv")).unwrap();
    assert_eq!(ra.lines().next(), Some(HEADER));
    assert_eq!(ra.lines().count(), 41);
    assert_eq!(ra, fs::read_to_string(b.join("records.csv")).unwrap());
    assert_ne!(ra, fs::read_to_string(c.join("records.csv")).unwrap());
    let s = summary(&a);
    assert_eq!(s["command"], "sweep");
    assert_eq!(s["seed"], 9);
    assert_eq!(s["report"]["consensus"], 40);
}

#[test]
fn experiments_require_a_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let out = spherecons(&["sweep", "--trials", "3", "--out", tmp.path().to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
    assert!(!tmp.path().join("records.csv").exists());
}

#[test]
fn pentagon_runs_without_a_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let stdout = run_ok(&["pentagon", "--out", tmp.path().to_str().unwrap()]);
    let report: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert!(report["residual"].as_f64().unwrap() < 1e-12);
    assert!((report["spectral_radius"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    let records = fs::read_to_string(tmp.path().join("records.csv")).unwrap();
    assert_eq!(records.lines().count(), 2);
}

#[test]
fn config_file_and_flag_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"cells": [[3, 2]], "trials": 7, "seed": 4}"#).unwrap();
    let out = tmp.path().join("out");
    run_ok(&["rank-table", "--config", cfg.to_str().unwrap(), "--trials", "12", "--out", out.to_str().unwrap()]);
    let s = summary(&out);
    assert_eq!(s["seed"], 4);
    assert_eq!(s["trials"], 12);
    assert_eq!(s["report"]["cells"][0]["n"], 3);
    assert_eq!(s["report"]["cells"][0]["trials"], 12);

    fs::write(&cfg, r#"{"trails": 7}"#).unwrap();
    let bad = spherecons(&["sweep", "--config", cfg.to_str().unwrap(), "--seed", "1", "--out", out.to_str().unwrap()]);
    assert!(!bad.status.success());
}

#[test]
fn symmetric_jg_rank_from_the_command_line() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("jg");
    run_ok(&["jg-rank", "--seed", "3", "--trials", "4", "--n", "5", "--d", "4", "--symmetric", "--out", out.to_str().unwrap()]);
    let s = summary(&out);
    assert_eq!(s["report"]["symmetric"], true);
    assert_eq!(s["report"]["fixed_points"], 4);
    assert_eq!(s["report"]["all_satisfied"], true);
}
