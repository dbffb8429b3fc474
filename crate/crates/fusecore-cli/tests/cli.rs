//! End-to-end tests of the command-line interface: exit codes, file
//! handling, idempotence, and the trained-checkpoint workflow.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fusecore"))
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("fusecore-cli-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

/// A config small enough for subprocess tests: short warmup, short
/// stages, 8-sample splits.
fn write_small_config(dir: &Path) -> PathBuf {
    let mut text = fusecore::config::TOY_PRESET.to_string();
    for (from, to) in [
        ("steps = 700", "steps = 300"),
        ("steps = 500", "steps = 300"),
        ("steps = 1000", "steps = 120"),
        ("warmup_steps = 30", "warmup_steps = 10"),
        ("warmup_steps = 25", "warmup_steps = 10"),
        ("warmup_steps = 50", "warmup_steps = 10"),
        ("count = 64", "count = 8"),
        ("count = 100", "count = 4"),
        ("count = 384", "count = 48"),
    ] {
        text = text.replace(from, to);
    }
    let path = dir.join("small.toml");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn help_exits_zero_everywhere() {
    for args in [
        vec!["--help"],
        vec!["make-data", "--help"],
        vec!["train", "--help"],
        vec!["generate", "--help"],
        vec!["eval", "--help"],
    ] {
        let out = bin().args(&args).output().unwrap();
        assert_eq!(code(&out), 0, "{args:?}");
        let text = String::from_utf8_lossy(&out.stdout);
        assert!(text.contains("Usage"), "{args:?}: {text}");
    }
}

#[test]
fn usage_errors_exit_one() {
    for args in [
        vec!["make-data", "--no-such-flag"],
        vec!["train"],              // missing --stage
        vec!["frobnicate"],         // unknown subcommand
        vec!["train", "--stage", "3"],
    ] {
        let out = bin().args(&args).output().unwrap();
        assert_eq!(code(&out), 1, "{args:?}");
    }
}

#[test]
fn runtime_errors_exit_two() {
    let dir = temp_dir("rt");
    // Missing checkpoint.
    let out = bin()
        .args(["generate", "--checkpoint", "nope.fckp", "--video", "nope.fvid", "--task", "caption"])
        .current_dir(&dir)
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    // Unknown preset.
    let out = bin()
        .args(["make-data", "--preset", "galactic"])
        .current_dir(&dir)
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    // Bad global seed override.
    let out = bin()
        .args(["make-data", "--preset", "toy", "--out", "x"])
        .env("FUSECORE_SEED", "not-a-number")
        .current_dir(&dir)
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn make_data_is_idempotent_and_respects_force() {
    let dir = temp_dir("mkdata");
    let cfg = write_small_config(&dir);
    let run = |extra: &[&str]| {
        let mut args = vec![
            "make-data".to_string(),
            "--config".into(),
            cfg.display().to_string(),
            "--out".into(),
            dir.join("data").display().to_string(),
        ];
        args.extend(extra.iter().map(|s| s.to_string()));
        bin().args(&args).output().unwrap()
    };
    assert_eq!(code(&run(&[])), 0);
    let first = fs::read(dir.join("data/stage1.jsonl")).unwrap();
    // Refuses to overwrite without --force.
    assert_eq!(code(&run(&[])), 2);
    // Identical bytes on a forced rerun.
    assert_eq!(code(&run(&["--force"])), 0);
    let second = fs::read(dir.join("data/stage1.jsonl")).unwrap();
    assert_eq!(first, second);

    // Headers parse and carry the right counts.
    let (header, records) = fusecore::datasynth::read_records(&dir.join("data/stage1.jsonl")).unwrap();
    assert_eq!(header.split, "stage1");
    assert_eq!(records.len(), 8);
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn overlapping_seed_ranges_fail_without_partial_output() {
    let dir = temp_dir("overlap");
    let cfg_path = dir.join("bad.toml");
    let text = fusecore::config::TOY_PRESET
        .to_string()
        .replace("[data.stage2]\nstart = 1000", "[data.stage2]\nstart = 10");
    fs::write(&cfg_path, text).unwrap();
    let out_dir = dir.join("data");
    let out = bin()
        .args([
            "make-data",
            "--config",
            cfg_path.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    assert!(!out_dir.join("stage1.jsonl").exists());
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn stage_two_requires_a_checkpoint() {
    let dir = temp_dir("stage2");
    let cfg = write_small_config(&dir);
    let out = bin()
        .args([
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--stage",
            "2",
            "--data",
            "data",
            "--out",
            "runs",
        ])
        .current_dir(&dir)
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("init-from"), "{msg}");
    fs::remove_dir_all(&dir).unwrap();
}

/// The full workflow: data, both stages, caption memorization through
/// `generate`, deterministic sampling, and evaluation.
#[test]
fn full_workflow_through_the_binary() {
    let dir = temp_dir("flow");
    let cfg = write_small_config(&dir);
    let cfg = cfg.to_str().unwrap();

    let ok = |args: &[&str]| {
        let out = bin().args(args).current_dir(&dir).output().unwrap();
        assert_eq!(
            code(&out),
            0,
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8_lossy(&out.stdout).to_string()
    };

    ok(&["make-data", "--config", cfg, "--out", "data"]);
    ok(&["train", "--config", cfg, "--stage", "1", "--data", "data", "--out", "runs"]);
    assert!(dir.join("runs/stage1.fckp").exists());
    assert!(dir.join("runs/warmup_log.jsonl").exists());
    ok(&[
        "train", "--config", cfg, "--stage", "2", "--data", "data", "--out", "runs",
        "--init-from", "runs/stage1.fckp",
    ]);
    assert!(dir.join("runs/stage2.fckp").exists());

    // Training logs are line-delimited records with the expected fields.
    let log = fs::read_to_string(dir.join("runs/stage1_log.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    for field in ["step", "lr", "loss", "wall_ms"] {
        assert!(first.get(field).is_some(), "log missing {field}");
    }

    // The stage-1 checkpoint reproduces a training caption exactly.
    let (_, records) = fusecore::datasynth::read_records(&dir.join("data/stage1.jsonl")).unwrap();
    let record = &records[0];
    let caption = ok(&[
        "generate",
        "--checkpoint",
        "runs/stage1.fckp",
        "--video",
        &format!("data/{}", record.video_path),
        "--task",
        "caption",
    ]);
    assert_eq!(caption.trim(), record.caption, "caption memorization");

    // Fixed-seed nucleus sampling is identical across runs.
    let gen_args = [
        "generate",
        "--checkpoint",
        "runs/stage2.fckp",
        "--video",
        &format!("data/{}", record.video_path),
        "--task",
        "prediction",
        "--strategy",
        "nucleus",
        "--top-p",
        "0.9",
        "--seed",
        "41",
    ];
    assert_eq!(ok(&gen_args), ok(&gen_args));

    // Evaluation writes a report and refuses to clobber it.
    let summary = ok(&[
        "eval", "--config", cfg, "--checkpoint", "runs/stage2.fckp", "--data", "data",
        "--split", "eval", "--out", "report.jsonl",
    ]);
    assert!(summary.contains("accuracy"), "{summary}");
    let report = fusecore::eval::read_report(&dir.join("report.jsonl")).unwrap();
    assert_eq!(report.samples.len(), 4);
    let again = bin()
        .args([
            "eval", "--config", cfg, "--checkpoint", "runs/stage2.fckp", "--data", "data",
            "--split", "eval", "--out", "report.jsonl",
        ])
        .current_dir(&dir)
        .output()
        .unwrap();
    assert_eq!(code(&again), 2);

    // Resume from a mid-run checkpoint reaches the same final loss as
    // the uninterrupted stage-1 run.
    let resume_cfg_path = dir.join("resume.toml");
    let resume_cfg = fs::read_to_string(dir.join("small.toml"))
        .unwrap()
        .replace("checkpoint_every = 0", "checkpoint_every = 150");
    fs::write(&resume_cfg_path, resume_cfg).unwrap();
    let rc = resume_cfg_path.to_str().unwrap();
    ok(&["train", "--config", rc, "--stage", "1", "--data", "data", "--out", "runs2"]);
    ok(&[
        "train", "--config", rc, "--stage", "1", "--data", "data", "--out", "runs3",
        "--resume", "runs2/stage1_step150.fckp",
    ]);
    let last_loss = |path: &Path| -> f64 {
        let text = fs::read_to_string(path).unwrap();
        let line = text.lines().last().unwrap();
        serde_json::from_str::<serde_json::Value>(line).unwrap()["loss"]
            .as_f64()
            .unwrap()
    };
    assert_eq!(
        last_loss(&dir.join("runs2/stage1_log.jsonl")),
        last_loss(&dir.join("runs3/stage1_log.jsonl")),
        "resumed run final loss differs"
    );

    fs::remove_dir_all(&dir).unwrap();
}
