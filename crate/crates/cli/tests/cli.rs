//! End-to-end subcommand tests driving the compiled binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn tenseg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tenseg"))
        .args(["--out-dir", dir.to_str().unwrap()])
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn assert_fails_mentioning(out: &Output, needle: &str) {
    assert!(!out.status.success(), "command should have failed");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains(needle),
        "stderr should mention {needle:?}, got: {stderr}"
    );
}

/// A small labeled dataset plus its truth trajectory.
fn gen(dir: &Path, name: &str, primitive: &str, seconds: &str) -> PathBuf {
    let out = tenseg(
        dir,
        &[
            "gen-data", "--seed", "11", "--primitive", primitive, "--duration", seconds,
            "--rate", "50", "--out", name,
        ],
    );
    assert_ok(&out);
    dir.join(name)
}

#[test]
fn gen_data_writes_dataset_truth_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let csv = gen(dir.path(), "run.csv", "FR", "5");
    assert!(csv.is_file());
    assert!(dir.path().join("run.truth.csv").is_file());

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run.manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["tool"], "tenseg");
    assert_eq!(manifest["subcommand"], "gen-data");
    assert_eq!(manifest["seed"], 11);
    assert_eq!(manifest["config"]["primitive"], "FR");
    assert_eq!(manifest["config"]["rate"], 50.0);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 2);

    let seq = tenseg_core::graphdata::read_dataset(&csv).unwrap();
    assert_eq!(seq.len(), 250);
    assert!(seq.is_labeled());
    assert_eq!(seq.sample_rate, 50.0);
}

#[test]
fn unlabeled_data_is_written_and_rejected_by_train() {
    let dir = tempfile::tempdir().unwrap();
    let out = tenseg(
        dir.path(),
        &["gen-data", "--duration", "4", "--rate", "50", "--unlabeled", "--out", "u.csv"],
    );
    assert_ok(&out);
    let seq = tenseg_core::graphdata::read_dataset(&dir.path().join("u.csv")).unwrap();
    assert!(!seq.is_labeled());

    let u = dir.path().join("u.csv");
    let out = tenseg(
        dir.path(),
        &["train", "--data", u.to_str().unwrap(), "--window", "25"],
    );
    assert_fails_mentioning(&out, "no contact columns");
}

#[test]
fn train_eval_predict_estimate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let f = gen(dir.path(), "f.csv", "F", "8");
    let fl = gen(dir.path(), "fl.csv", "FL", "8");

    let out = tenseg(
        dir.path(),
        &[
            "train", "--seed", "7", "--data", f.to_str().unwrap(), "--data", fl.to_str().unwrap(),
            "--window", "25", "--layers", "2", "--hidden", "16", "--epochs", "2",
            "--batch-size", "64", "--lr", "3e-3", "--out", "m.ckpt",
        ],
    );
    let stdout = assert_ok(&out);
    assert!(stdout.contains("best epoch"), "stdout: {stdout}");
    assert!(dir.path().join("m.ckpt").is_file());
    let history = std::fs::read_to_string(dir.path().join("m.history.csv")).unwrap();
    assert!(history.starts_with("epoch,train_loss,val_accuracy,val_macro_f1\n"));
    assert_eq!(history.lines().count(), 3, "header + 2 epochs");

    let out = tenseg(
        dir.path(),
        &["eval", "--data", f.to_str().unwrap(), "--model", "m.ckpt", "--out", "metrics.csv"],
    );
    // --model is read relative to the process cwd, not out-dir: pass full path
    assert!(!out.status.success());
    let model = dir.path().join("m.ckpt");
    let out = tenseg(
        dir.path(),
        &[
            "eval", "--data", f.to_str().unwrap(), "--model", model.to_str().unwrap(),
            "--out", "metrics.csv",
        ],
    );
    let stdout = assert_ok(&out);
    assert!(stdout.contains("macro F1"), "stdout: {stdout}");
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
    assert!(metrics.starts_with("windows,exact_match_accuracy,macro_f1,"));

    let out = tenseg(
        dir.path(),
        &[
            "predict", "--data", f.to_str().unwrap(), "--model", model.to_str().unwrap(),
            "--out", "pred.csv",
        ],
    );
    assert_ok(&out);
    let pred = std::fs::read_to_string(dir.path().join("pred.csv")).unwrap();
    let lines: Vec<&str> = pred.lines().collect();
    assert_eq!(lines[0], "c0,c1,c2,c3,c4,c5,warmup");
    assert_eq!(lines.len() - 1, 400, "one row per input timestep");
    for warm in &lines[1..25] {
        assert_eq!(*warm, "0,0,0,0,0,0,1");
    }
    for row in &lines[25..] {
        assert!(row.ends_with(",0"), "predicted rows carry warmup=0: {row}");
    }

    // estimate from truth contacts, with drift report
    let truth = dir.path().join("f.truth.csv");
    let out = tenseg(
        dir.path(),
        &[
            "estimate", "--data", f.to_str().unwrap(), "--contacts", "truth",
            "--truth", truth.to_str().unwrap(), "--out", "traj.csv",
        ],
    );
    let stdout = assert_ok(&out);
    assert!(stdout.contains("drift"), "stdout: {stdout}");
    let traj = std::fs::read_to_string(dir.path().join("traj.csv")).unwrap();
    let lines: Vec<&str> = traj.lines().collect();
    assert_eq!(lines[0], "t,x,y,z,qw,qx,qy,qz,vx,vy,vz");
    assert_eq!(lines.len() - 1, 400, "one pose per input timestep");

    // estimate from the prediction file
    let pred_path = dir.path().join("pred.csv");
    let out = tenseg(
        dir.path(),
        &[
            "estimate", "--data", f.to_str().unwrap(), "--contacts", pred_path.to_str().unwrap(),
            "--out", "traj_pred.csv",
        ],
    );
    assert_ok(&out);
    assert!(dir.path().join("traj_pred.csv").is_file());
}

#[test]
fn config_file_fills_defaults_and_explicit_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("defaults.cfg");
    std::fs::write(&cfg, "duration=4\nrate = 50 # hz\nprimitive=BL\n\n# only a comment\n").unwrap();

    let out = tenseg(
        dir.path(),
        &[
            "gen-data", "--config", cfg.to_str().unwrap(), "--primitive", "FL",
            "--out", "c.csv",
        ],
    );
    assert_ok(&out);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("c.manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["config"]["primitive"], "FL", "explicit flag beats file");
    assert_eq!(manifest["config"]["duration"], 4.0, "file fills unset flag");
    assert_eq!(manifest["config"]["rate"], 50.0);

    // unknown keys are rejected with location
    std::fs::write(&cfg, "not-a-flag=3\n").unwrap();
    let out = tenseg(
        dir.path(),
        &["gen-data", "--config", cfg.to_str().unwrap(), "--out", "d.csv"],
    );
    assert_fails_mentioning(&out, "not-a-flag");
}

#[test]
fn group_check_prints_the_table_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = tenseg(dir.path(), &["group-check"]);
    let stdout = assert_ok(&out);
    assert!(stdout.contains("elements (6):"));
    assert!(stdout.contains("all axioms hold"));
    // one table row per element, each listing all six products
    for row in ["e", "r", "r2", "f", "fr", "fr2"] {
        assert!(stdout.lines().any(|l| l.trim_start().starts_with(&format!("{row} "))));
    }
}

#[test]
fn grad_check_passes_and_tol_is_enforced() {
    let dir = tempfile::tempdir().unwrap();
    let out = tenseg(
        dir.path(),
        &["grad-check", "--seed", "3", "--coords", "24", "--batch", "4"],
    );
    let stdout = assert_ok(&out);
    assert!(stdout.contains("PASS"), "stdout: {stdout}");

    let out = tenseg(
        dir.path(),
        &["grad-check", "--seed", "3", "--coords", "24", "--batch", "4", "--tol", "1e-18"],
    );
    assert!(!out.status.success(), "absurd tolerance must fail");
    assert!(String::from_utf8_lossy(&out.stderr).contains("FAIL"));
}

#[test]
fn bad_flags_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = tenseg(dir.path(), &["gen-data", "--ratio", "1.5"]);
    assert_fails_mentioning(&out, "ratio");

    let out = tenseg(dir.path(), &["gen-data", "--primitive", "sideways"]);
    assert!(!out.status.success());

    let out = tenseg(dir.path(), &["train"]);
    assert_fails_mentioning(&out, "--data");

    let out = tenseg(dir.path(), &["estimate", "--data", "missing.csv"]);
    assert_fails_mentioning(&out, "missing.csv");
}

#[test]
fn contact_file_length_must_match_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let f = gen(dir.path(), "f.csv", "F", "5");
    let short = dir.path().join("short.csv");
    std::fs::write(&short, "c0,c1,c2,c3,c4,c5,warmup\n0,0,0,1,1,1,0\n").unwrap();
    let out = tenseg(
        dir.path(),
        &["estimate", "--data", f.to_str().unwrap(), "--contacts", short.to_str().unwrap()],
    );
    assert_fails_mentioning(&out, "contact rows");
}

#[test]
fn suite_manifest_replays_the_exact_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = tenseg(
        dir.path(),
        &[
            "gen-data", "--seed", "21", "--suite", "primitives", "--duration", "3",
            "--rate", "50", "--out", "s.csv",
        ],
    );
    assert_ok(&out);

    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("s_br.manifest.json")).unwrap(),
    )
    .unwrap();
    let config = &manifest["config"];
    let replay_dir = tempfile::tempdir().unwrap();
    let out = tenseg(
        replay_dir.path(),
        &[
            "gen-data",
            "--seed", &manifest["seed"].to_string(),
            "--primitive", config["primitive"].as_str().unwrap(),
            "--ratio", &config["ratio"].to_string(),
            "--duration", &config["duration"].to_string(),
            "--rate", &config["rate"].to_string(),
            "--noise-accel", &config["noise_accel"].to_string(),
            "--noise-gyro", &config["noise_gyro"].to_string(),
            "--noise-tendon", &config["noise_tendon"].to_string(),
            "--out", "replayed.csv",
        ],
    );
    assert_ok(&out);
    let original = std::fs::read(dir.path().join("s_br.csv")).unwrap();
    let replayed = std::fs::read(replay_dir.path().join("replayed.csv")).unwrap();
    assert_eq!(original, replayed, "manifest replay must be byte-identical");
}
