use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn spillsynth(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spillsynth")).args(args).output().unwrap()
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(Result::unwrap).collect()
}

fn simulate(dir: &Path) -> String {
    let out = spillsynth(&["simulate", "--seed", "3", "--output-dir", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    dir.join("config.toml").to_string_lossy().into_owned()
}

#[test]
fn simulate_then_run_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let config = simulate(tmp.path());
    let out = spillsynth(&["run", "--config", &config, "--grid-size", "40"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let results = tmp.path().join("results");
    for f in ["weights.csv", "balance.csv", "penalties.csv", "rmspe.csv", "effects.csv", "placebo.csv", "placebo_summary.csv", "cv.csv"] {
        assert!(!csv_rows(&results.join(f)).is_empty(), "{f}");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(results.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "run");
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["cv_skipped"], false);
    assert_eq!(csv_rows(&results.join("penalties.csv")).len(), 2);
}

#[test]
fn subcommands_write_their_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let config = simulate(tmp.path());
    let dir = tmp.path().join("staged");
    let d = dir.to_str().unwrap();

    let out = spillsynth(&["validate", "--config", &config]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("900 rows, 45 units, 11 clusters"));

    assert!(spillsynth(&["match", "--config", &config, "--output-dir", d]).status.success());
    assert!(!csv_rows(&dir.join("matches.csv")).is_empty());

    assert!(spillsynth(&["cv", "--config", &config, "--output-dir", d, "--grid-size", "20"]).status.success());
    assert!(dir.join("cv.csv").exists() && !dir.join("weights.csv").exists());

    let fixed = [
        "estimate", "--config", &config, "--output-dir", d, "--lambda-treated", "0.1", "--lambda-neighbors", "0.2",
        "--lambda-star", "0.3",
    ];
    assert!(spillsynth(&fixed).status.success());
    assert!(dir.join("effects.csv").exists() && !dir.join("placebo.csv").exists());
    let pen = fs::read_to_string(dir.join("penalties.csv")).unwrap();
    assert!(pen.contains("y1,0.1,0.2,0.3"), "{pen}");

    let mut placebo = fixed;
    placebo[0] = "placebo";
    assert!(spillsynth(&placebo).status.success());
    assert!(!csv_rows(&dir.join("placebo_summary.csv")).is_empty());
}

#[test]
fn bad_input_fails_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let config = simulate(tmp.path());

    let out = spillsynth(&["validate", "--config", &config, "--treated-unit", "nobody"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let panel = tmp.path().join("panel.csv");
    let mut text = fs::read_to_string(&panel).unwrap();
    text.push_str("u01,c01,1,y1,3.5\n");
    fs::write(&panel, text).unwrap();
    let out = spillsynth(&["validate", "--config", &config]);
    assert!(!out.status.success());

    let out = spillsynth(&["estimate", "--config", &config, "--lambda-treated", "0.1"]);
    assert!(!out.status.success());

    let out = spillsynth(&["validate", "--input", "missing.csv"]);
    assert!(!out.status.success());
}
