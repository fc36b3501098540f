//! End-to-end runs of the `condgp` binary: exit codes and output layout.

use std::path::Path;
use std::process::{Command, Output};

fn condgp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_condgp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn help_lists_subcommands_and_config_keys() {
    let out = condgp(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["gen-data", "fit", "condition", "run", "mc", "sweep", "validate"] {
        assert!(text.contains(cmd), "missing subcommand {cmd}");
    }
    for key in ["filter.np", "offline.rank", "schedule.switch_step"] {
        assert!(text.contains(key), "missing key {key}");
    }
}

#[test]
fn validate_passes() {
    let out = condgp(&["validate", "--quiet"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(!text.contains("FAIL"), "{text}");
}

#[test]
fn unknown_override_key_is_a_config_error() {
    let out = condgp(&["run", "--override", "npp=5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("npp"), "{}", stderr(&out));
}

#[test]
fn unreadable_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.json");
    let out = condgp(&["run", "--config", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_override_value_is_a_config_error() {
    let out = condgp(&["run", "--override", "filter.np=many"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("filter.np"), "{}", stderr(&out));
}

fn assert_files(dir: &Path, names: &[&str]) {
    for name in names {
        assert!(dir.join(name).is_file(), "missing {}", dir.join(name).display());
    }
}

#[test]
fn short_monte_carlo_study_writes_runs_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("mc");
    let out = condgp(&[
        "mc",
        "--quiet",
        "--seed",
        "7",
        "--out",
        out_dir.to_str().unwrap(),
        "--override",
        "runs=2",
        "schedule.steps=120",
        "schedule.switch_step=60",
        "filter.np=30",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_files(&out_dir, &["config.json", "basis.json", "scree.csv", "mc_summary.csv", "mc_summary.json"]);
    for seed in [7, 8] {
        let run = out_dir.join("runs").join(format!("battery_{seed:06}"));
        assert_files(&run, &["steps.csv", "config.json"]);
    }
    let summary = std::fs::read_to_string(out_dir.join("mc_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 121);
    assert!(summary.starts_with("step,mean_function_error"));
}

#[test]
fn sinc_sweep_from_shipped_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/sinc.json");
    let out = condgp(&[
        "sweep",
        "--quiet",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--override",
        "offline.optimize_hyperparameters=false",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let sweep = std::fs::read_to_string(dir.path().join("dof_sweep.csv")).unwrap();
    assert!(sweep.lines().count() > 10);
}
