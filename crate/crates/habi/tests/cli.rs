//! Black-box tests of the `habi` binary: exit codes, error messages, and
//! the demo pipeline's run-directory layout.

use std::path::Path;
use std::process::Command;

fn habi() -> Command {
    Command::new(env!("CARGO_BIN_EXE_habi"))
}

#[test]
fn help_exits_zero() {
    let out = habi().arg("--help").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["gen-data", "train-planner", "habitize", "eval", "bench", "report", "demo"] {
        assert!(text.contains(sub), "--help should list {sub}");
    }
}

#[test]
fn unknown_subcommand_exits_one() {
    let out = habi().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bad_config_override_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = habi()
        .args(["gen-data", "--out"])
        .arg(dir.path())
        .args(["--set", "bogus.key=1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus.key"));
}

#[test]
fn missing_prerequisite_exits_one_and_names_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out = habi().args(["bench", "--out"]).arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("planner"), "stderr was: {stderr}");
}

#[test]
fn config_file_and_seed_flag_are_honored() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("run.cfg");
    std::fs::write(&config_path, "env.preset = reach\nenv.n_episodes_data = 3\n").unwrap();
    let out = habi()
        .args(["gen-data", "--out"])
        .arg(dir.path().join("run"))
        .arg("--config")
        .arg(&config_path)
        .args(["--seed", "7"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("run/data/dataset.bin").exists());
}

fn run_demo(out_dir: &Path) {
    let out = habi().args(["demo", "--out"]).arg(out_dir).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn demo_produces_full_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    run_demo(dir.path());
    for file in [
        "config.txt",
        "data/dataset.bin",
        "planner/planner.ckpt",
        "habitize/seed_0/model_latest.ckpt",
        "habitize/seed_0/metrics.csv",
        "habitize/seed_0/teacher.bin",
        "habitize/seed_0/distill.ckpt",
        "eval/eval.csv",
        "bench/bench.csv",
        "report/report.csv",
        "report/report.txt",
    ] {
        assert!(dir.path().join(file).exists(), "missing {file}");
    }
    let report = std::fs::read_to_string(dir.path().join("report/report.txt")).unwrap();
    assert!(report.contains("Performance"));
    assert!(report.contains("Action Frequency (Hz)"));
}

#[test]
fn rerunning_a_stage_gets_a_fresh_suffix_directory() {
    let dir = tempfile::tempdir().unwrap();
    for _ in 0..2 {
        let out = habi()
            .args(["gen-data", "--out"])
            .arg(dir.path())
            .args(["--set", "env.preset=reach", "--set", "env.n_episodes_data=2"])
            .output()
            .unwrap();
        assert!(out.status.success());
    }
    assert!(dir.path().join("data/dataset.bin").exists());
    assert!(dir.path().join("data-2/dataset.bin").exists());
}
