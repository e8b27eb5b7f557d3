//! End-to-end tests for the `cdpcl` binary: exit codes, file outputs, and
//! the full gen-data -> train -> eval -> report pipeline on a tiny corpus.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cdpcl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cdpcl"))
        .args(args)
        .output()
        .expect("spawn cdpcl")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_and_version_exit_zero() {
    let h = cdpcl(&["--help"]);
    assert_eq!(h.status.code(), Some(0));
    assert!(stdout(&h).contains("gen-data"));
    let v = cdpcl(&["--version"]);
    assert_eq!(v.status.code(), Some(0));
}

#[test]
fn unknown_flag_and_missing_subcommand_exit_one() {
    let bad = cdpcl(&["train", "--bogus"]);
    assert_eq!(bad.status.code(), Some(1));
    let none = cdpcl(&[]);
    assert_eq!(none.status.code(), Some(1));
}

#[test]
fn invalid_threads_env_rejected_before_any_work() {
    let out_dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_cdpcl"))
        .args(["gen-data", "--out"])
        .arg(out_dir.path())
        .env("CDPCL_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("CDPCL_THREADS"));
    assert!(fs::read_dir(out_dir.path()).unwrap().next().is_none());
}

#[test]
fn gen_data_validates_classes() {
    let out_dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_cdpcl"))
        .args(["gen-data", "--classes", "1", "--out"])
        .arg(out_dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(fs::read_dir(out_dir.path()).unwrap().next().is_none());
}

#[test]
fn train_with_missing_config_exits_one() {
    let out = cdpcl(&["train", "--config", "/nonexistent/cfg"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!stderr(&out).is_empty());
}

#[test]
fn eval_with_missing_checkpoint_exits_one() {
    let d = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_cdpcl"))
        .args(["eval", "--checkpoint", "/nonexistent.ckpt", "--data"])
        .arg(d.path())
        .arg("--out")
        .arg(d.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn report_with_missing_run_dir_exits_one() {
    let d = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_cdpcl"))
        .args(["report", "--runs", "/nonexistent/run", "--out"])
        .arg(d.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn selftest_passes_and_prints_per_property_lines() {
    let out = cdpcl(&["selftest"]);
    let text = stdout(&out);
    assert_eq!(out.status.code(), Some(0), "stdout: {text}");
    assert_eq!(text.matches("[PASS]").count(), 12);
    assert_eq!(text.matches("[FAIL]").count(), 0);
}

fn write_config(path: &Path, data_dir: &Path, out_dir: &Path) {
    let text = format!(
        "data_dir = {}\nout_dir = {}\nseed = 7\nclasses = 4\nfeat_dim = 12\nbatch = 2\niters = 6\ncheckpoint_every = 0\nablation = cdpcl\n",
        data_dir.display(),
        out_dir.display()
    );
    fs::write(path, text).unwrap();
}

#[test]
fn full_pipeline_on_tiny_corpus() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    let gen = Command::new(env!("CARGO_BIN_EXE_cdpcl"))
        .args([
            "gen-data",
            "--classes",
            "4",
            "--height",
            "32",
            "--width",
            "32",
            "--train-count",
            "4",
            "--eval-count",
            "2",
            "--seed",
            "9",
            "--out",
        ])
        .arg(&data)
        .output()
        .unwrap();
    assert_eq!(gen.status.code(), Some(0), "stderr: {}", stderr(&gen));
    assert!(data.join("src_train").join("manifest.tsv").is_file());

    let run = root.path().join("run");
    let cfg = root.path().join("train.cfg");
    write_config(&cfg, &data, &run);
    let tr = cdpcl(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(tr.status.code(), Some(0), "stderr: {}", stderr(&tr));
    let ckpt = run.join("ckpt_final.ckpt");
    assert!(ckpt.is_file());
    assert!(run.join("train_log.csv").is_file());

    let ev = Command::new(env!("CARGO_BIN_EXE_cdpcl"))
        .args(["eval", "--checkpoint"])
        .arg(&ckpt)
        .arg("--data")
        .arg(data.join("unseen_a"))
        .arg(data.join("unseen_b"))
        .arg("--out")
        .arg(&run)
        .output()
        .unwrap();
    assert_eq!(ev.status.code(), Some(0), "stderr: {}", stderr(&ev));
    assert!(run.join("eval_miou.csv").is_file());
    assert!(run.join("discrepancy.md").is_file());

    let rep_dir = root.path().join("report");
    let rp = Command::new(env!("CARGO_BIN_EXE_cdpcl"))
        .args(["report", "--runs"])
        .arg(&run)
        .arg("--out")
        .arg(&rep_dir)
        .output()
        .unwrap();
    assert_eq!(rp.status.code(), Some(0), "stderr: {}", stderr(&rp));
    assert!(rep_dir.join("summary.csv").is_file());
    assert!(rep_dir.join("report.md").is_file());
    assert!(rep_dir.join("loss_curves.svg").is_file());
}
