//! End-to-end runs of the `frtp` binary against a temporary data directory.

use std::path::Path;
use std::process::{Command, Output};

fn frtp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_frtp"))
        .arg("--data-dir")
        .arg(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_json(dir: &Path, args: &[&str]) -> serde_json::Value {
    let out = frtp(dir, args);
    assert!(
        out.status.success(),
        "frtp {args:?} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    let last = stdout.lines().last().expect("summary line");
    serde_json::from_str(last).unwrap_or_else(|e| panic!("bad summary {last:?}: {e}"))
}

fn run_pipeline(dir: &Path) -> serde_json::Value {
    run_json(dir, &["synth", "--seed", "7", "--ics", "4", "--days", "14",
        "--holiday", "2024-01-08"]);
    let ingest = run_json(dir, &["ingest"]);
    assert_eq!(ingest["search_rejects"], 0);
    assert_eq!(ingest["traffic_rejects"], 0);
    run_json(dir, &["federate"]);
    run_json(dir, &["features", "--in-step", "60", "--in-size", "24", "--train-days", "9"]);
    run_json(dir, &["train", "--epochs", "3", "--batch-size", "4", "--lstm-hidden", "8",
        "--in-size", "24", "--train-days", "9", "--val-days", "2", "--test-days", "2"])
}

#[test]
fn pipeline_is_deterministic_and_self_consistent() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let train_a = run_pipeline(a.path());
    let train_b = run_pipeline(b.path());
    assert_eq!(train_a["final_train_loss"], train_b["final_train_loss"]);
    assert_eq!(train_a["test_mae"], train_b["test_mae"]);
    assert_eq!(
        std::fs::read(a.path().join("model.json")).unwrap(),
        std::fs::read(b.path().join("model.json")).unwrap(),
        "checkpoints differ between identical runs"
    );

    // Evaluate must reproduce the test MAE the training run reported.
    let eval = run_json(
        a.path(),
        &["evaluate", "--train-days", "9", "--val-days", "2", "--test-days", "2"],
    );
    assert_eq!(eval["mae"], train_a["test_mae"]);
    assert!(eval["n_test"].as_u64().unwrap() > 0);

    let predict = run_json(a.path(), &["predict"]);
    assert!(predict["samples"].as_u64().unwrap() > 0);
    let preds_a = std::fs::read(a.path().join("predictions.csv")).unwrap();
    assert!(preds_a.len() > 100);
    run_json(b.path(), &["predict"]);
    assert_eq!(preds_a, std::fs::read(b.path().join("predictions.csv")).unwrap());

    let analyze = run_json(a.path(), &["analyze"]);
    assert!(a.path().join("analysis/correlation.csv").exists());
    assert!(a.path().join("analysis/day_type_distribution.csv").exists());
    assert!(analyze["degenerate_columns"].is_array());
}

#[test]
fn ablation_subcommand_writes_ranked_table() {
    let dir = tempfile::tempdir().unwrap();
    run_json(dir.path(), &["synth", "--seed", "9", "--ics", "4", "--days", "14"]);
    let cfg = serde_json::json!({
        "seed": 1100,
        "input_step_minutes": 60,
        "output_step_minutes": 60,
        "window": { "input_size": 24, "n_day_interval": 0, "output_size": 24 },
        "feature_rows": [
            { "traffic": true, "time": false, "search": false, "search_unspec": false },
            { "traffic": true, "time": true, "search": true, "search_unspec": true }
        ],
        "grid_input_sizes": [24],
        "grid_intervals": [0],
        "split_days": { "train": 9, "validation": 2, "test": 2 },
        "epochs": 2,
        "batch_size": 4,
        "learning_rate": 1e-3,
        "lstm_hidden": 8,
        "conv_kernel_time": 3
    });
    let cfg_path = dir.path().join("experiment.json");
    std::fs::write(&cfg_path, cfg.to_string()).unwrap();
    let out = run_json(dir.path(), &["ablation", "--config", cfg_path.to_str().unwrap()]);
    assert_eq!(out["rows"], 2);
    let csv = std::fs::read_to_string(dir.path().join("results/ablation.csv")).unwrap();
    assert!(csv.lines().count() == 3, "expected header + 2 rows:\n{csv}");
}

#[test]
fn missing_data_dir_is_a_clean_error() {
    let out = Command::new(env!("CARGO_BIN_EXE_frtp"))
        .env_remove("FRTP_DATA_DIR")
        .arg("ingest")
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    let v: serde_json::Value = serde_json::from_str(stderr.lines().last().unwrap()).unwrap();
    assert!(v["error"].as_str().unwrap().contains("data-dir"));
}
