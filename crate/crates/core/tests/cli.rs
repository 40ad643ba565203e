mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::default_config_path;

fn zslcraft(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zslcraft"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(default_config_path(), dir.path().join("run.conf")).unwrap();
    dir
}

const FAST: [&str; 2] = ["--set", "train.epochs=3"];

fn run(dir: &Path, command: &str, extra: &[&str]) -> Output {
    let mut args = vec![command, "--config", "run.conf"];
    args.extend_from_slice(&FAST);
    args.extend_from_slice(extra);
    zslcraft(dir, &args)
}

#[test]
fn config_errors_exit_2() {
    let dir = setup();
    let out = run(dir.path(), "synth", &["--set", "synth.colour=blue"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("synth.colour"));
    assert_eq!(
        run(dir.path(), "synth", &["--set", "no-equals-sign"]).status.code(),
        Some(2)
    );
    std::fs::write(dir.path().join("dup.conf"), "seed = 1\nseed = 2\n").unwrap();
    assert_eq!(
        zslcraft(dir.path(), &["synth", "--config", "dup.conf"]).status.code(),
        Some(2)
    );
}

#[test]
fn data_errors_exit_3() {
    let dir = setup();
    assert_eq!(run(dir.path(), "train", &[]).status.code(), Some(3));
    assert_eq!(run(dir.path(), "synth", &[]).status.code(), Some(0));
    std::fs::write(dir.path().join("data/split.txt"), "garbage\n").unwrap();
    assert_eq!(run(dir.path(), "craft", &[]).status.code(), Some(3));
}

#[test]
fn singular_projection_exits_4() {
    let dir = setup();
    assert!(run(dir.path(), "synth", &[]).status.success());
    // 16 attributes, 15 seen classes: the unregularized normal equations are singular
    let out = run(dir.path(), "craft", &["--set", "craft.lambda=0"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(!dir.path().join("rules.txt").exists());
}

#[test]
fn outputs_need_force_to_be_replaced() {
    let dir = setup();
    assert!(run(dir.path(), "synth", &[]).status.success());
    let before = std::fs::read(dir.path().join("data/features.txt")).unwrap();
    let again = run(dir.path(), "synth", &["--set", "seed=2"]);
    assert_eq!(again.status.code(), Some(3));
    assert_eq!(std::fs::read(dir.path().join("data/features.txt")).unwrap(), before);
    assert!(run(dir.path(), "synth", &["--set", "seed=2", "--force"])
        .status
        .success());
    assert_ne!(std::fs::read(dir.path().join("data/features.txt")).unwrap(), before);
}

#[test]
fn full_run_with_out_paths() {
    let dir = setup();
    let d = dir.path();
    assert!(run(d, "synth", &[]).status.success());
    assert!(run(d, "craft", &["--out", "sem.rules", "--set", "craft.mode=semantic"])
        .status
        .success());
    assert!(
        run(d, "train", &["--out", "sem.model", "--set", "paths.rules=sem.rules"])
            .status
            .success()
    );
    assert!(
        run(d, "rebalance", &["--out", "sem.disc", "--set", "paths.model=sem.model"])
            .status
            .success()
    );
    let eval = run(
        d,
        "eval",
        &[
            "--out",
            "out/report.txt",
            "--set",
            "paths.model=sem.model",
            "--set",
            "paths.rules=sem.rules",
            "--set",
            "paths.disc=sem.disc",
            "--set",
            "eval.rebalance=learned",
        ],
    );
    assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));
    let stdout = String::from_utf8(eval.stdout).unwrap();
    let keys: Vec<&str> = stdout.lines().map(|l| l.split('=').next().unwrap()).collect();
    assert_eq!(keys, ["T1", "S", "U", "H"]);
    let report = std::fs::read_to_string(d.join("out/report.txt")).unwrap();
    assert!(report.ends_with(&stdout));
    assert!(report.contains("# eval.rebalance = learned"));
}

#[test]
fn mismatched_pool_is_rejected() {
    let dir = setup();
    let d = dir.path();
    assert!(run(d, "synth", &[]).status.success());
    assert!(run(d, "craft", &["--out", "sem.rules", "--set", "craft.mode=semantic"])
        .status
        .success());
    assert!(run(d, "craft", &["--out", "vis.rules"]).status.success());
    assert!(run(d, "train", &["--set", "paths.rules=sem.rules"]).status.success());
    let out = run(d, "eval", &["--set", "paths.rules=vis.rules"]);
    assert_eq!(out.status.code(), Some(3));
}
