//! End-to-end CLI checks: exit codes, determinism, and the golden eval
//! report produced from the committed fixture checkpoint.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn mrhp() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mrhp"))
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn run(args: &[&str]) -> Output {
    mrhp().args(args).output().expect("binary runs")
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                files.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn generate_is_byte_identical_for_a_fixed_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = fixtures().join("synth_spec.json");
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    for out in [&out_a, &out_b] {
        let output = run(&[
            "generate",
            "--config",
            spec.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(output.status.success(), "{output:?}");
    }
    assert_eq!(dir_bytes(&out_a), dir_bytes(&out_b));
}

#[test]
fn eval_reproduces_the_golden_report() {
    let tmp = tempfile::tempdir().unwrap();
    let report = tmp.path().join("report.json");
    let output = run(&[
        "eval",
        "--checkpoint",
        fixtures().join("model.ckpt").to_str().unwrap(),
        "--data",
        fixtures().join("dataset/manifest.jsonl").to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{output:?}");
    let got = fs::read(&report).unwrap();
    let golden = fs::read(fixtures().join("golden_eval.json")).unwrap();
    assert_eq!(got, golden, "eval report drifted from the golden fixture");
}

#[test]
fn train_then_eval_round_trips_through_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let output = run(&[
        "train",
        "--config",
        fixtures().join("train_config.json").to_str().unwrap(),
        "--data",
        fixtures().join("dataset/manifest.jsonl").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{output:?}");
    // training with the fixture config regenerates the fixture checkpoint
    let fresh = fs::read(out.join("model.ckpt")).unwrap();
    let committed = fs::read(fixtures().join("model.ckpt")).unwrap();
    assert_eq!(fresh, committed, "training is no longer bit-deterministic");
    assert!(out.join("losses.json").exists());
}

#[test]
fn gradcheck_passes_and_detects_corruption() {
    let ok = run(&["gradcheck", "--points", "5"]);
    assert!(ok.status.success(), "{ok:?}");
    let stdout = String::from_utf8_lossy(&ok.stdout);
    assert!(stdout.contains("gradient verification passed"), "{stdout}");

    let corrupted = mrhp()
        .args(["gradcheck", "--points", "5", "--corrupt", "matmul"])
        .output()
        .unwrap();
    assert_eq!(corrupted.status.code(), Some(2), "{corrupted:?}");
}

#[test]
fn unknown_flag_exits_one_with_usage() {
    let output = run(&["eval", "--no-such-flag"]);
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.to_lowercase().contains("usage"), "{stderr}");
}

#[test]
fn validation_failures_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    // label out of range in a hand-written manifest
    let manifest = tmp.path().join("manifest.jsonl");
    fs::write(
        &manifest,
        concat!(
            "{\"vocab_size\": 8, \"feature_dim\": 2}\n",
            "{\"product_id\":\"p\",\"tokens\":[1,2,3],\"images\":[],\"reviews\":",
            "[{\"review_id\":\"r0\",\"tokens\":[1,2,3],\"images\":[],\"label\":9},",
            "{\"review_id\":\"r1\",\"tokens\":[1,2,3],\"images\":[],\"label\":1}]}\n"
        ),
    )
    .unwrap();
    let output = run(&[
        "eval",
        "--checkpoint",
        fixtures().join("model.ckpt").to_str().unwrap(),
        "--data",
        manifest.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(1), "{output:?}");
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("r0"), "{stderr}");
}

#[test]
fn sigtest_reports_p_value_between_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sig.json");
    let golden = fixtures().join("golden_eval.json");
    let output = run(&[
        "sigtest",
        "--a",
        golden.to_str().unwrap(),
        "--b",
        golden.to_str().unwrap(),
        "--metric",
        "MAP",
        "--resamples",
        "500",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{output:?}");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    // identical systems: the difference is never positive
    assert_eq!(report["p_value"], 1.0);

    let bad_metric = run(&[
        "sigtest",
        "--a",
        golden.to_str().unwrap(),
        "--b",
        golden.to_str().unwrap(),
        "--metric",
        "MRR",
    ]);
    assert_eq!(bad_metric.status.code(), Some(1));
}

#[test]
fn distances_emits_groups_for_present_labels() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("dist.json");
    let output = run(&[
        "distances",
        "--checkpoint",
        fixtures().join("model.ckpt").to_str().unwrap(),
        "--data",
        fixtures().join("dataset/manifest.jsonl").to_str().unwrap(),
        "--groups",
        "1,4",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{output:?}");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    let groups = report["groups"].as_array().unwrap();
    assert!(!groups.is_empty());
    for group in groups {
        assert!(group["samples"].as_u64().unwrap() > 0);
        let cs = group["intra_modal"]["cs_mean"].as_f64().unwrap();
        assert!((-1.0..=1.0).contains(&cs));
    }
}
