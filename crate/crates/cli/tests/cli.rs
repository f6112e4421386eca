use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const CONFIG: &str = r#"{
  "m": 80, "k": 10, "n_pilot_cfo": 100, "n_uplink": 100, "n_coherence": 200,
  "p_u": 1.0, "sigma2": 1.0, "beta": [1, 1, 1, 1, 1, 1, 1, 1, 1, 1],
  "omega_max": 0.06283185307179587, "c0": 1.0, "seed": 11
}"#;

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, body).unwrap();
    path
}

fn simulate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_simulate")).args(args).output().unwrap()
}

fn error_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(out.stderr.trim_ascii()).unwrap()
}

#[test]
fn snr_gap_writes_csv_and_summary() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let out_dir = dir.path().join("out");
    let out = simulate(&["--config", cfg.to_str().unwrap(), "--experiment", "snr_gap", "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("snr_gap.csv")).unwrap();
    assert!(csv.starts_with("experiment,m,receiver,cfo_mode,target_rate,metric"));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("snr_gap_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["experiment"], "snr_gap");
    assert_eq!(summary["metadata"]["seed"], 11);
    assert_eq!(summary["all_pass"], true);
}

#[test]
fn array_gain_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let mut csvs = Vec::new();
    for run in ["a", "b"] {
        let out_dir = dir.path().join(run);
        let out = simulate(&[
            "--config",
            cfg.to_str().unwrap(),
            "--experiment",
            "array_gain",
            "--out",
            out_dir.to_str().unwrap(),
            "--trials",
            "40",
            "--seed",
            "5",
            "--m-grid",
            "80,160",
            "--receivers",
            "zf",
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        csvs.push(std::fs::read(out_dir.join("array_gain.csv")).unwrap());
        let plot = std::fs::read_to_string(out_dir.join("array_gain_plot.csv")).unwrap();
        assert_eq!(plot.lines().count(), 3);
    }
    assert_eq!(csvs[0], csvs[1]);
    let text = String::from_utf8(csvs[0].clone()).unwrap();
    assert!(text.lines().skip(1).all(|l| l.contains(",zf,estimated,")));
}

#[test]
fn unknown_config_field_is_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &CONFIG.replace("\"seed\"", "\"sed\""));
    let out = simulate(&["--config", cfg.to_str().unwrap(), "--experiment", "snr_gap", "--out", "unused"]);
    assert!(!out.status.success());
    assert_eq!(error_json(&out)["error"], "parse");
}

#[test]
fn invalid_config_reports_validation_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &CONFIG.replace("\"m\": 80", "\"m\": 8"));
    let out = simulate(&["--config", cfg.to_str().unwrap(), "--experiment", "snr_gap", "--out", "unused"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "validation");
}

#[test]
fn unreachable_rate_reports_bracket_failure() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let out_dir = dir.path().join("out");
    let out = simulate(&[
        "--config",
        cfg.to_str().unwrap(),
        "--experiment",
        "snr_gap",
        "--out",
        out_dir.to_str().unwrap(),
        "--target-rates",
        "6",
    ]);
    assert_eq!(out.status.code(), Some(4));
    let err = error_json(&out);
    assert_eq!(err["error"], "bracket_failure");
    assert!(err["message"].as_str().unwrap().contains('6'));
}

#[test]
fn unknown_experiment_is_an_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let out = simulate(&["--config", cfg.to_str().unwrap(), "--experiment", "figure_9", "--out", "unused"]);
    assert!(!out.status.success());
    assert_eq!(error_json(&out)["error"], "unknown_experiment");
}
