//! The binary's exit codes, headers and stage contracts.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn nullcal(args: &[&str], config: Option<&Path>, out: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_nullcal"));
    cmd.args(args).arg("--out").arg(out);
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, json: &str) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, json).unwrap();
    path
}

const TINY: &str = r#"{
  "gaussian": { "r": 3, "q": 5, "n": 3 },
  "dataset": { "count": 60 },
  "ranges": ["ridge"],
  "nulls": ["oracle", {"scaled-oracle": 0.5}],
  "sbc": { "cases": 6, "samples_per_case": 10 },
  "map": { "samples": 5, "average_cases": 3 },
  "report": { "samples": 5 }
}"#;

#[test]
fn unknown_key_exits_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"sbc": {"samples": 3}}"#);
    let out = nullcal(&["gen"], Some(&cfg), &dir.path().join("run"));
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("sbc") && err.contains("samples"), "{err}");
}

#[test]
fn gen_writes_headers_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let run = dir.path().join("run");
    assert!(nullcal(&["gen"], Some(&cfg), &run).status.success());
    let test = std::fs::read_to_string(run.join("data/test.csv")).unwrap();
    assert!(test.starts_with("# format_version: 1\n# tool_version:"));
    assert!(test.contains("# config_hash: "));
    let rows = test.lines().filter(|l| !l.starts_with('#')).count();
    assert_eq!(rows, 1 + 6);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("run_manifest.json")).unwrap()).unwrap();
    for file in manifest["data"]["stages"]["gen"].as_array().unwrap() {
        assert!(run.join(file.as_str().unwrap()).exists());
    }
    assert!(manifest["header"]["config_hash"].is_string());
}

#[test]
fn oracle_pipeline_runs_without_training() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let run = dir.path().join("run");
    let ok = |args: &[&str]| {
        let o = nullcal(args, Some(&cfg), &run);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    };
    ok(&["gen"]);
    ok(&["train", "--stage", "range"]);
    ok(&["sbc", "--stat", "l2"]);
    ok(&["map", "--average"]);
    ok(&["report"]);
    assert!(run.join("sbc/oracle/l2_norm.json").exists());
    assert!(!run.join("sbc/oracle/peak_ratio.json").exists());
    assert!(run.join("sbc/scaled-oracle-0.5/histogram_l2_norm.svg").exists());
    assert!(run.join("map/oracle/average.csv").exists());
    let svg = std::fs::read_to_string(run.join("sbc/oracle/histogram_l2_norm.svg")).unwrap();
    assert!(svg.starts_with("<!--\nformat_version: 1"));
    let grid = std::fs::read_to_string(run.join("report/grid.csv")).unwrap();
    let cells: Vec<Vec<&str>> = grid
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    assert_eq!(cells.len(), 2);
    let residual = |c: &Vec<&str>| c[5].parse::<f64>().unwrap();
    assert!((residual(&cells[0]) - residual(&cells[1])).abs() < 1e-8);
}

#[test]
fn sweep_needs_the_fourier_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let run = dir.path().join("run");
    assert!(nullcal(&["gen"], Some(&cfg), &run).status.success());
    assert_eq!(nullcal(&["sweep"], Some(&cfg), &run).status.code(), Some(2));
}

#[test]
fn missing_or_mismatched_artifacts_are_compatibility_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let run = dir.path().join("run");
    assert_eq!(nullcal(&["sbc"], Some(&cfg), &run).status.code(), Some(3));
    assert!(nullcal(&["gen"], Some(&cfg), &run).status.success());
    assert_eq!(nullcal(&["report"], Some(&cfg), &run).status.code(), Some(3));
    let other = write_config(dir.path(), &TINY.replace("\"r\": 3, \"q\": 5, \"n\": 3", "\"r\": 4, \"q\": 4, \"n\": 4"));
    assert_eq!(nullcal(&["sbc"], Some(&other), &run).status.code(), Some(3));
}

#[test]
fn empty_test_split_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &TINY.replace("\"count\": 60", "\"count\": 1"));
    let run = dir.path().join("run");
    assert!(nullcal(&["gen"], Some(&cfg), &run).status.success());
    assert!(nullcal(&["train", "--stage", "range"], Some(&cfg), &run).status.success());
    assert_eq!(nullcal(&["report"], Some(&cfg), &run).status.code(), Some(2));
}

#[test]
fn stage_flag_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let run = dir.path().join("run");
    assert_eq!(nullcal(&["train", "--stage", "bogus"], Some(&cfg), &run).status.code(), Some(2));
    assert_eq!(nullcal(&["gen", "--stage", "range"], Some(&cfg), &run).status.code(), Some(2));
}

#[test]
fn reruns_are_byte_identical_and_seed_changes_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let read = |run: &Path| std::fs::read(run.join("data/train.csv")).unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    assert!(nullcal(&["gen"], Some(&cfg), &a).status.success());
    assert!(nullcal(&["gen"], Some(&cfg), &b).status.success());
    assert!(nullcal(&["gen", "--seed", "7"], Some(&cfg), &c).status.success());
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}
