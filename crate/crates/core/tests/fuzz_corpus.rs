//! Replays the checked-in fuzz seeds through the fuzz targets' round-trip
//! checks, so the corpus stays meaningful on stable toolchains.

use std::path::PathBuf;

use spkf_nui::filters::{read_trace_csv, read_trace_json, write_trace_csv, write_trace_json};
use spkf_nui::harness::ExperimentConfig;
use spkf_nui::models::Trajectory;

fn seeds(target: &str) -> Vec<(PathBuf, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .map(|p| {
            let text = std::fs::read_to_string(&p).unwrap();
            (p, text)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn config_seeds() {
    let mut accepted = 0;
    for (_, text) in seeds("config") {
        if let Ok(cfg) = ExperimentConfig::from_json(&text) {
            let again = ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap();
            assert_eq!(cfg.hash(), again.hash());
            accepted += 1;
        }
    }
    assert!(accepted >= 1);
}

#[test]
fn trajectory_seeds() {
    for (path, text) in seeds("trajectory_csv") {
        if let Ok(t) = Trajectory::from_csv(&text) {
            assert_eq!(Trajectory::from_csv(&t.to_csv().unwrap()).unwrap(), t, "{}", path.display());
        }
    }
    for (path, text) in seeds("trajectory_json") {
        let t = Trajectory::from_json(&text).unwrap();
        assert_eq!(Trajectory::from_json(&t.to_json().unwrap()).unwrap(), t, "{}", path.display());
    }
}

#[test]
fn trace_seeds() {
    for (path, text) in seeds("trace_csv") {
        let rows = read_trace_csv(&text).unwrap();
        assert_eq!(read_trace_csv(&write_trace_csv(&rows).unwrap()).unwrap(), rows, "{}", path.display());
    }
    for (path, text) in seeds("trace_json") {
        if let Ok(rows) = read_trace_json(&text) {
            assert_eq!(read_trace_json(&write_trace_json(&rows).unwrap()).unwrap(), rows, "{}", path.display());
        }
    }
}
