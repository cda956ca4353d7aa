//! End-to-end tests of the `pilf` binary: flag handling, layered config,
//! output files, and the exit-code contract.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pilf_core::data::generate_synthetic;

fn pilf() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pilf"));
    // Isolate each test from ambient PILF_* overrides.
    for (key, _) in std::env::vars() {
        if key.starts_with("PILF_") {
            cmd.env_remove(key);
        }
    }
    cmd
}

fn write_ratings(dir: &Path) -> PathBuf {
    let data = generate_synthetic(40, 30, 2, 0.3, 0.05, 21).unwrap();
    let path = dir.join("ratings.csv");
    data.matrix.write_csv_path(&path).unwrap();
    path
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

#[test]
fn successful_run_exits_zero_and_writes_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_ratings(dir.path());
    let out = dir.path().join("metrics.csv");
    let checkpoint = dir.path().join("factors.csv");

    let output = pilf()
        .args(["--data", data.to_str().unwrap()])
        .args(["--out", out.to_str().unwrap()])
        .args(["--checkpoint", checkpoint.to_str().unwrap()])
        .args(["--rank", "2", "--epochs", "10", "--seed", "5"])
        .output()
        .unwrap();

    assert!(output.status.success(), "stderr: {}", stderr(&output));
    assert!(out.exists());
    assert!(checkpoint.exists());
    let text = stdout(&output);
    assert!(text.contains("best validation rmse"), "stdout: {text}");
    assert!(text.contains("test rmse"), "stdout: {text}");

    let metrics = std::fs::read_to_string(&out).unwrap();
    assert!(metrics.starts_with("epoch,train_sse,val_rmse,val_mae,elapsed_seconds\n"));
    assert!(metrics.lines().count() > 1);
}

#[test]
fn unreadable_data_exits_nonzero_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let output = pilf()
        .args(["--data", dir.path().join("missing.csv").to_str().unwrap()])
        .args(["--out", dir.path().join("m.csv").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr(&output).contains("missing.csv"));
}

#[test]
fn malformed_data_cites_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.csv");
    std::fs::write(&data, "1,2,3.0\n4,5,six\n").unwrap();
    let output = pilf()
        .args(["--data", data.to_str().unwrap()])
        .args(["--out", dir.path().join("m.csv").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    let err = stderr(&output);
    assert!(err.contains("line 2"), "stderr: {err}");
}

#[test]
fn divergence_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_ratings(dir.path());
    let output = pilf()
        .args(["--data", data.to_str().unwrap()])
        .args(["--out", dir.path().join("m.csv").to_str().unwrap()])
        .args(["--rank", "2", "--lr", "1e12", "--epochs", "50"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2), "stderr: {}", stderr(&output));
    assert!(stderr(&output).contains("diverged"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.conf");
    std::fs::write(&config, "learning-rate = 0.1\n").unwrap();
    let output = pilf()
        .args(["--config", config.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr(&output).contains("learning-rate"));
}

#[test]
fn flags_override_env_which_overrides_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_ratings(dir.path());
    let out = dir.path().join("m.csv");
    let config = dir.path().join("run.conf");
    std::fs::write(
        &config,
        format!(
            "# experiment defaults\ndata = {}\nout = {}\nepochs = 3\nrank = 2\nlr = 0.5\n",
            data.display(),
            out.display()
        ),
    )
    .unwrap();

    // Env overrides the file's epochs; the flag overrides the env's rank.
    let output = pilf()
        .args(["--config", config.to_str().unwrap()])
        .env("PILF_EPOCHS", "5")
        .env("PILF_RANK", "4")
        .args(["--rank", "3"])
        .output()
        .unwrap();
    assert!(output.status.success(), "stderr: {}", stderr(&output));
    let metrics = std::fs::read_to_string(&out).unwrap();
    assert_eq!(metrics.lines().count(), 6, "expected 5 epochs: {metrics}");
    // Rank 3 comes from the flag; verify via the checkpoint dimensions.
    let output = pilf()
        .args(["--config", config.to_str().unwrap()])
        .env("PILF_RANK", "4")
        .args(["--rank", "3"])
        .args(["--checkpoint", dir.path().join("f.csv").to_str().unwrap()])
        .output()
        .unwrap();
    assert!(output.status.success());
    let header = std::fs::read_to_string(dir.path().join("f.csv")).unwrap();
    assert!(header.starts_with("40,30,3\n"), "checkpoint header: {header}");
}

#[test]
fn sweep_mode_writes_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_ratings(dir.path());
    let out = dir.path().join("sweep.csv");
    let output = pilf()
        .args(["--data", data.to_str().unwrap()])
        .args(["--out", out.to_str().unwrap()])
        .args(["--rank", "2", "--epochs", "5"])
        .args(["--sweep-kp", "0.8,1.0", "--sweep-ki", "0,0.01,0.05"])
        .args(["--workers", "2"])
        .output()
        .unwrap();
    assert!(output.status.success(), "stderr: {}", stderr(&output));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("kp,ki,best_rmse,best_mae,epochs_to_best,seconds_to_best,diverged\n"));
    assert_eq!(text.lines().count(), 7); // header + 2*3 cells
    assert!(stdout(&output).contains("sweep complete: 6 cells"));
}

#[test]
fn negative_gains_warn_but_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_ratings(dir.path());
    let output = pilf()
        .args(["--data", data.to_str().unwrap()])
        .args(["--out", dir.path().join("m.csv").to_str().unwrap()])
        .args(["--rank", "2", "--epochs", "2", "--ki", "-0.01"])
        .output()
        .unwrap();
    assert!(output.status.success(), "stderr: {}", stderr(&output));
    assert!(stderr(&output).contains("warning"), "stderr: {}", stderr(&output));
}
