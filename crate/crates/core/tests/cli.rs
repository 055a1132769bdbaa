use std::path::Path;
use std::process::Command;

use semready::cli::{Checkpoint, EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_semready"))
}

fn small(cmd: &str, out: &Path) -> Command {
    let mut c = bin();
    c.arg(cmd)
        .arg("--out")
        .arg(out)
        .args(["--seed", "3", "--set", "data.points=200", "--set", "train.epochs=2"]);
    c
}

fn code(c: &mut Command) -> i32 {
    let out = c.output().unwrap();
    out.status.code().unwrap()
}

#[test]
fn train_split_build_lang_write_their_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert_eq!(code(&mut small("train", &out)), EXIT_OK);
    for f in [
        "encoder.bin",
        "momentum.bin",
        "bank.json",
        "metrics.csv",
        "metrics.json",
    ] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("epoch,mean_L_I,mean_L_D,mean_L_T\n"));
    assert!(!csv.contains('\r'));
    assert_eq!(csv.lines().count(), 3);

    assert_eq!(code(&mut small("split", &out)), EXIT_OK);
    assert_eq!(code(&mut small("build-lang", &out)), EXIT_OK);
    let split: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("split.json")).unwrap()).unwrap();
    assert!(split.get("threshold").is_some());
    let lang: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("language.json")).unwrap()).unwrap();
    assert!(lang["avg_length_bits"].as_f64().unwrap() >= 0.0);
}

#[test]
fn checkpoint_roundtrips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert_eq!(code(&mut small("train", &out)), EXIT_OK);
    let a = Checkpoint::load(&out).unwrap();
    let b = Checkpoint::load(&out).unwrap();
    assert_eq!(a.encoder, b.encoder);
    assert_eq!(a.bank.num_clusters(), 6);
}

#[test]
fn validation_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = small("train", &out).args(["--set", "train.lrr=0.1"]).output().unwrap();
    assert_eq!(o.status.code(), Some(EXIT_VALIDATION));
    assert!(String::from_utf8_lossy(&o.stderr).contains("train.lrr"));

    assert_eq!(
        code(small("train", &out).args(["--set", "train.lr=0"])),
        EXIT_VALIDATION
    );
    assert_eq!(code(bin().arg("frobnicate")), EXIT_VALIDATION);
    assert_eq!(
        code(bin().args(["train", "--config"]).arg(dir.path().join("absent.toml"))),
        EXIT_VALIDATION
    );
}

#[test]
fn incompatible_checkpoint_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert_eq!(code(&mut small("train", &out)), EXIT_OK);
    assert_eq!(
        code(small("split", &out).args(["--set", "data.dim=5"])),
        EXIT_VALIDATION
    );
}

#[test]
fn missing_checkpoint_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&mut small("split", &dir.path().join("nothing"))), EXIT_RUNTIME);
}

#[test]
fn help_exits_zero() {
    assert_eq!(code(bin().arg("--help")), EXIT_OK);
    assert_eq!(code(bin().args(["sweep", "--help"])), EXIT_OK);
}

#[test]
fn config_file_is_read_and_overridden() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "seed = 11\n[data]\npoints = 150\n[train]\nepochs = 1\n").unwrap();
    let out = dir.path().join("run");
    let status = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(["--set", "train.epochs=3"])
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}
