//! End-to-end CLI checks: exit codes, missing-artifact messages, overrides,
//! and the cheap front half of the pipeline.

use std::path::Path;
use std::process::{Command, Output};

fn bronchograde(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bronchograde"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn report_without_artifacts_exits_2_and_names_the_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path().join("ws");
    let out = bronchograde(&["report", "--workspace", ws.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
    assert!(
        stderr(&out).contains("eval/metrics.csv"),
        "stderr: {}",
        stderr(&out)
    );
}

#[test]
fn evaluate_without_split_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path().join("ws");
    let out = bronchograde(&["evaluate", "--workspace", ws.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("data/test.csv"));
}

#[test]
fn invalid_config_value_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path().join("ws");
    let out = bronchograde(&[
        "split",
        "--workspace",
        ws.to_str().unwrap(),
        "-S",
        "split.ratio=1.7",
    ]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("split.ratio"));
}

#[test]
fn unknown_stage_exits_2() {
    let out = bronchograde(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ingest_missing_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path().join("ws");
    let out = bronchograde(&[
        "ingest",
        "--workspace",
        ws.to_str().unwrap(),
        "--input",
        "/nonexistent/manifest.csv",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

fn synth_and_front_half(dir: &Path, ratio_override: Option<&str>) -> std::path::PathBuf {
    let corpus = dir.join("corpus");
    let ws = dir.join("ws");
    let out = bronchograde(&[
        "synth-data",
        "--out",
        corpus.to_str().unwrap(),
        "--images-per-grade",
        "4",
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let manifest = corpus.join("manifest.csv");
    assert!(manifest.is_file());

    let out = bronchograde(&[
        "ingest",
        "--workspace",
        ws.to_str().unwrap(),
        "--input",
        manifest.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));

    let mut split_args = vec![
        "split".to_string(),
        "--workspace".into(),
        ws.display().to_string(),
        "--seed".into(),
        "9".into(),
    ];
    if let Some(r) = ratio_override {
        split_args.push("-S".into());
        split_args.push(format!("split.ratio={r}"));
    }
    let args: Vec<&str> = split_args.iter().map(|s| s.as_str()).collect();
    let out = bronchograde(&args);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    ws
}

#[test]
fn front_half_produces_artifacts_and_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let ws = synth_and_front_half(dir.path(), None);
    for rel in [
        "data/manifest.csv",
        "data/counts.csv",
        "data/train.csv",
        "data/test.csv",
        "data/split.json",
        "manifests/ingest.json",
        "manifests/split.json",
    ] {
        assert!(ws.join(rel).is_file(), "missing {rel}");
    }

    let out = bronchograde(&["augment", "--workspace", ws.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    assert!(ws.join("augmented/manifest.csv").is_file());
    assert!(ws.join("augmented/counts.csv").is_file());
    let counts = std::fs::read_to_string(ws.join("augmented/counts.csv")).unwrap();
    assert!(counts.starts_with("grade,Original,Transformations"));
}

#[test]
fn dotted_override_reaches_the_split_stage() {
    let dir = tempfile::tempdir().unwrap();
    let ws = synth_and_front_half(dir.path(), Some("0.5"));
    let split = std::fs::read_to_string(ws.join("data/split.json")).unwrap();
    assert!(split.contains("\"ratio\": 0.5"), "split.json: {split}");
}

#[test]
fn grade_and_variant_filters_narrow_gan_training() {
    let dir = tempfile::tempdir().unwrap();
    let ws = synth_and_front_half(dir.path(), None);
    let shrink = [
        "-S", "gan.epochs=1",
        "-S", "gan.steps_per_epoch_cap=4",
        "-S", "gan.base_channels=8",
        "-S", "gan.n_res_blocks=1",
        "-S", "gan.image_size=16",
        "-S", "gan.patches_per_image=4",
        "-S", "gan.negatives_per_anchor=3",
    ];
    let mut args = vec![
        "train-gan",
        "--workspace",
        ws.to_str().unwrap(),
        "--grade",
        "2",
        "--variant",
        "cut",
    ];
    args.extend_from_slice(&shrink);
    let out = bronchograde(&args);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    assert!(ws.join("models/gan/cut_grade_2.ckpt").is_file());
    assert!(!ws.join("models/gan/cut_grade_1.ckpt").exists());
    assert!(!ws.join("models/gan/cyclegan_grade_2.ckpt").exists());

    let mut args = vec![
        "generate",
        "--workspace",
        ws.to_str().unwrap(),
        "--grade",
        "2",
        "--variant",
        "cut",
        "-S",
        "gan.generate_multiplier=2",
    ];
    args.extend_from_slice(&shrink);
    let out = bronchograde(&args);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    assert!(ws.join("generated/cut_manifest.csv").is_file());
    let listing: Vec<_> = std::fs::read_dir(ws.join("generated/cut/grade_2"))
        .unwrap()
        .collect();
    assert!(!listing.is_empty());

    // a second filtered run for another grade merges into the manifest
    // instead of replacing it
    let mut args = vec![
        "train-gan",
        "--workspace",
        ws.to_str().unwrap(),
        "--grade",
        "3",
        "--variant",
        "cut",
    ];
    args.extend_from_slice(&shrink);
    assert_eq!(bronchograde(&args).status.code(), Some(0));
    let mut args = vec![
        "generate",
        "--workspace",
        ws.to_str().unwrap(),
        "--grade",
        "3",
        "--variant",
        "cut",
        "-S",
        "gan.generate_multiplier=2",
    ];
    args.extend_from_slice(&shrink);
    assert_eq!(bronchograde(&args).status.code(), Some(0));
    let manifest = std::fs::read_to_string(ws.join("generated/cut_manifest.csv")).unwrap();
    assert!(manifest.contains("grade_2/"), "grade 2 rows lost: {manifest}");
    assert!(manifest.contains("grade_3/"), "grade 3 rows missing");
}
