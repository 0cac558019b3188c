use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spkf-nui"))
}

fn small_config(dir: &Path) -> std::path::PathBuf {
    let mut cfg: Value = serde_json::from_str(spkf_nui::harness::CASE_STUDY_1).unwrap();
    cfg["steps"] = Value::from(1500);
    cfg["runs"] = Value::from(2);
    let path = dir.join("small.config");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn run(args: &[&str], config: &Path, out: &Path) -> Output {
    bin()
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

#[test]
fn full_pipeline_succeeds() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("out");
    for cmd in ["simulate", "estimate", "bound", "report"] {
        let o = run(&[cmd, "--jobs", "2"], &cfg, &out);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = run(&["report"], &cfg, &out);
    let summary = stdout_json(&o);
    let root = Path::new(summary["artifacts"].as_str().unwrap());
    for f in ["manifest.json", "config.json", "report/table.md", "report/bound.csv", "metrics/runs.csv"] {
        assert!(root.join(f).is_file(), "missing {f}");
    }
    assert!(summary["best_state"].as_str().unwrap().contains("nUI"), "{summary}");
}

#[test]
fn estimate_without_simulate_reports_missing_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let o = run(&["estimate"], &cfg, &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "MissingArtifact");
    assert_eq!(err["error"]["run"], 0);
}

#[test]
fn invalid_config_reports_path() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.config");
    std::fs::write(&path, spkf_nui::harness::CASE_STUDY_1.replacen("\"runs\"", "\"rnus\"", 1)).unwrap();
    let o = run(&["simulate"], &path, &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "ConfigInvalid");
    assert!(err["error"]["message"].as_str().unwrap().contains("rnus"));
}

#[test]
fn usage_errors_exit_with_one() {
    let o = bin().arg("frobnicate").output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    let o = bin().args(["simulate", "--runs", "many"]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(bin().arg("--help").output().unwrap().status.success());
}

#[test]
fn overrides_change_the_artifact_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("out");
    let a = stdout_json(&run(&["simulate", "--seed", "1", "--runs", "1"], &cfg, &out));
    let b = stdout_json(&run(&["simulate", "--seed", "2", "--runs", "1"], &cfg, &out));
    assert_ne!(a["config_hash"], b["config_hash"]);
    let zero = run(&["simulate", "--runs", "0"], &cfg, &out);
    assert_eq!(zero.status.code(), Some(2));
}
