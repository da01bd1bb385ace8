use std::fs;
use std::process::{Command, Output};

fn qmda(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qmda")).args(args).output().unwrap()
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn unknown_preset_exits_with_parameter_code() {
    let out = qmda(&["run", "--preset", "no-such-preset"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown preset"));
}

#[test]
fn run_requires_a_preset() {
    assert_eq!(qmda(&["run"]).status.code(), Some(2));
}

#[test]
fn binary_circle_preset_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    let out = qmda(&["run", "--preset", "circle-binary-a", "--out", out_dir]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = stdout_json(&out);
    assert_eq!(summary["preset"], "circle-binary-a");
    for file in ["config.json", "bundle.bin", "bundle.sha256", "run.csv", "summary.json"] {
        assert!(dir.path().join(file).exists(), "{file}");
    }
}

#[test]
fn train_then_assimilate_with_another_truth() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = dir.path().join("bundle");
    let run = dir.path().join("run");
    let b = bundle.to_str().unwrap();
    let out = qmda(&["train", "--preset", "l63-delay", "--scale", "0.03", "--out", b]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout_json(&out)["dim"].as_u64().unwrap() > 1);

    let out = qmda(&[
        "assimilate",
        "--bundle",
        b,
        "--truth-seed",
        "7",
        "--steps",
        "1500",
        "--out",
        run.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = stdout_json(&out);
    assert_eq!(summary["truth_seed"], 7);
    assert_eq!(summary["run_steps"], 1500);
    let hash = fs::read_to_string(bundle.join("bundle.sha256")).unwrap();
    assert_eq!(summary["bundle_hash"], hash.trim());
}

#[test]
fn tampered_bundle_exits_with_parameter_code() {
    let dir = tempfile::tempdir().unwrap();
    let b = dir.path().to_str().unwrap();
    assert!(qmda(&["train", "--preset", "circle-binary-a", "--out", b])
        .status
        .success());
    fs::write(dir.path().join("bundle.sha256"), "00\n").unwrap();
    let out = qmda(&["assimilate", "--bundle", b]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("hash"));
}

#[test]
fn missing_bundle_exits_with_io_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = qmda(&["assimilate", "--bundle", dir.path().join("absent").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_file_takes_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let first = qmda(&[
        "run",
        "--preset",
        "circle-binary-a",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(first.status.success());
    let config = dir.path().join("config.json");
    let out = qmda(&["run", "--preset", "circle-cos", "--config", config.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout_json(&out)["preset"], "circle-binary-a");
}

#[test]
fn converge_accepts_a_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let out = qmda(&["converge", "--sweep", "300,600", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = stdout_json(&out);
    assert_eq!(report["rows"].as_array().unwrap().len(), 2);
    assert!(dir.path().join("convergence.csv").exists());
}
