use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn lve(args: &[&str], out: &Path, threads: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lve"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("LVE_THREADS", threads)
        .output()
        .expect("binary runs")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn trees_writes_all_125() {
    let dir = tempfile::tempdir().unwrap();
    let out = lve(&["trees", "--n", "5"], dir.path(), "1");
    assert_eq!(out.status.code(), Some(0));
    let payload = read_json(&dir.path().join("trees.json"));
    assert_eq!(payload["count"], 125);
    assert_eq!(payload["trees"].as_array().unwrap().len(), 125);
    let manifest = read_json(&dir.path().join("manifest.json"));
    assert_eq!(manifest["config"]["seed"], 1);
    assert!(manifest["wall_time_seconds"].is_number());
}

#[test]
fn series_and_lve_agree_at_second_order() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(lve(&["series", "--sites", "2", "--order", "2"], dir.path(), "1").status.code(), Some(0));
    assert_eq!(lve(&["lve", "--sites", "2", "--order", "2"], dir.path(), "1").status.code(), Some(0));
    let s = read_json(&dir.path().join("series.json"))["coefficients"][2]["value"].as_f64().unwrap();
    let l = read_json(&dir.path().join("lve.json"))["coefficients"][2]["value"].as_f64().unwrap();
    assert!((s - l).abs() <= 1e-8 * s.abs(), "{s} vs {l}");
    let manifest = read_json(&dir.path().join("manifest.json"));
    assert_eq!(manifest["notes"]["derivation_convention"], "single-derivation");
}

#[test]
fn cancel_reports_exact_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = lve(&["cancel", "--n", "4"], dir.path(), "1");
    assert_eq!(out.status.code(), Some(0));
    let payload = read_json(&dir.path().join("cancel.json"));
    assert_eq!(payload["planar_sums"][3]["value"], "0");
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(lve(&["trees", "--bogus"], dir.path(), "1").status.code(), Some(2));
    assert_eq!(lve(&["series", "--mass", "-1"], dir.path(), "1").status.code(), Some(2));
    assert_eq!(lve(&["frobnicate"], dir.path(), "1").status.code(), Some(2));
    assert_eq!(lve(&["series"], dir.path(), "zero").status.code(), Some(2));
    assert_eq!(lve(&["series", "--sites", "0"], dir.path(), "1").status.code(), Some(2));
}

#[test]
fn failed_check_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    // slow decay: increments grow with the size
    let out = lve(&["cluster", "--c", "0.3", "--radius", "3", "--size", "4"], dir.path(), "1");
    assert_eq!(out.status.code(), Some(1));
    assert!(dir.path().join("cluster.json").exists());
}

#[test]
fn dry_run_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("never");
    let out = lve(&["cleaning", "--jmax", "3", "--dry-run"], &target, "1");
    assert_eq!(out.status.code(), Some(0));
    let printed: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(printed["config"]["jmax"], 3);
    assert_eq!(printed["options"]["name"], "cleaning");
    assert!(!target.exists());
}

#[test]
fn csv_output() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(lve(&["nelson", "--format", "csv"], dir.path(), "1").status.code(), Some(0));
    let text = fs::read_to_string(dir.path().join("nelson.csv")).unwrap();
    assert!(text.starts_with("j,log_value,value,below_one"));
    assert_eq!(text.lines().count(), 47);
}

#[test]
fn identical_runs_are_byte_identical() {
    let runs: [&[&str]; 3] = [
        &["bkar-check", "--samples", "30", "--psd-draws", "100", "--seed", "7"],
        &["cleaning", "--jmax", "2"],
        &["borel", "--format", "csv"],
    ];
    for args in runs {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        assert!(lve(args, a.path(), "1").status.success());
        assert!(lve(args, b.path(), "3").status.success());
        let manifest = read_json(&a.path().join("manifest.json"));
        for f in manifest["files"].as_array().unwrap() {
            let name = f.as_str().unwrap();
            assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
        }
    }
}

#[test]
fn seed_changes_random_payloads() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(lve(&["bkar-check", "--samples", "5", "--psd-draws", "5", "--seed", "1"], a.path(), "1").status.success());
    assert!(lve(&["bkar-check", "--samples", "5", "--psd-draws", "5", "--seed", "2"], b.path(), "1").status.success());
    assert_ne!(fs::read(a.path().join("bkar-check.json")).unwrap(), fs::read(b.path().join("bkar-check.json")).unwrap());
}
