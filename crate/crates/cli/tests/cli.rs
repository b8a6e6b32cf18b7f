mod common;

use std::fs;
use std::path::Path;

use common::{ssd, ssd_ok, tsv_field, tsv_field_in_row};
use ssd_core::detector::{
    calibrate, euclid_score_batch, ssd_score_batch, Calibration, DetectorModel, FewShotModel,
};
use ssd_core::io::{load_features, partition};
use ssd_core::metrics::{evaluate, EvalReport};

fn stderr(out: &std::process::Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// canonical in/out pair at d = 16 plus a raw-feature model fitted on `in.csv`.
fn canonical(dir: &Path) {
    ssd_ok(dir, &["synth", "--preset", "canonical-in", "--n", "1200", "--seed", "1", "--out", "in.csv"]);
    ssd_ok(dir, &["synth", "--preset", "canonical-in", "--n", "400", "--seed", "2", "--out", "in_test.bin"]);
    ssd_ok(dir, &["synth", "--preset", "canonical-ood", "--n", "400", "--seed", "3", "--out", "ood.bin"]);
    ssd_ok(dir, &["fit", "in.csv", "--no-normalize", "--seed", "4", "--model", "model.json", "--cal-out", "cal.bin"]);
}

#[test]
fn evaluate_matches_library_calls() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    canonical(d);
    let model = DetectorModel::<f64>::load(d.join("model.json")).unwrap();
    let tin = load_features(d.join("in_test.bin")).unwrap();
    let tood = load_features(d.join("ood.bin")).unwrap();

    let json = ssd_ok(d, &["evaluate", "--model", "model.json", "--in", "in_test.bin", "--ood", "ood.bin", "--json"]);
    let cli: EvalReport = serde_json::from_str(&json).unwrap();
    let lib = evaluate(
        &ssd_score_batch(&model, &tin).unwrap(),
        &ssd_score_batch(&model, &tood).unwrap(),
        0.95,
    )
    .unwrap();
    assert_eq!(cli, lib);
    assert!(cli.auroc >= 0.95, "{}", cli.auroc);

    let tsv = ssd_ok(d, &["evaluate", "--model", "model.json", "--in", "in_test.bin", "--ood", "ood.bin", "--score", "euclid"]);
    let euclid = evaluate(
        &euclid_score_batch(&model, &tin).unwrap(),
        &euclid_score_batch(&model, &tood).unwrap(),
        0.95,
    )
    .unwrap();
    assert_eq!(tsv, format!("{}\n{}\n", EvalReport::TSV_HEADER, euclid.to_tsv_line()));
}

#[test]
fn calibrate_score_classify_agree_with_library() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    canonical(d);
    let from_file = ssd_ok(d, &["calibrate", "--model", "model.json", "--cal", "cal.bin"]);
    let from_split = ssd_ok(d, &["calibrate", "--model", "model.json", "--features", "in.csv", "--seed", "4"]);
    assert_eq!(from_file, from_split);

    let model = DetectorModel::<f64>::load(d.join("model.json")).unwrap();
    let (_, cal_rows) = partition(&load_features(d.join("in.csv")).unwrap(), 0.9, 4).unwrap();
    let lib = calibrate(&ssd_score_batch(&model, &cal_rows).unwrap(), 0.95).unwrap();
    let cli: Calibration = serde_json::from_str(&from_file).unwrap();
    assert_eq!(cli, lib);

    fs::write(d.join("cal.json"), &from_file).unwrap();
    ssd_ok(d, &["score", "--model", "model.json", "cal.bin", "--out", "scores.tsv"]);
    let flags = ssd_ok(d, &["classify", "--scores", "scores.tsv", "--calibration", "cal.json"]);
    let rows: Vec<&str> = flags.lines().skip(1).collect();
    assert_eq!(rows.len(), lib.cal_count);
    let accepted = rows.iter().filter(|r| r.ends_with("\tfalse")).count();
    assert!(accepted as f64 / rows.len() as f64 >= 0.95);
}

#[test]
fn usage_errors_exit_with_clap_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = ssd(dir.path(), &["fit", "x.csv", "--clusters", "0", "--model", "m.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--clusters"), "{}", stderr(&out));
    assert_eq!(ssd(dir.path(), &["score", "--bogus"]).status.code(), Some(2));
    assert_eq!(ssd(dir.path(), &[]).status.code(), Some(2));
    assert!(ssd(dir.path(), &["--help"]).status.success());
}

#[test]
fn dimension_mismatch_names_both_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    canonical(d);
    ssd_ok(d, &["synth", "--preset", "canonical-in", "--d", "8", "--n", "10", "--out", "small.csv"]);
    let out = ssd(d, &["score", "--model", "model.json", "small.csv"]);
    assert_eq!(out.status.code(), Some(1));
    let msg = stderr(&out);
    assert!(msg.contains("expected 16") && msg.contains("got 8"), "{msg}");
}

#[test]
fn schema_mismatch_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    canonical(d);
    let text = fs::read_to_string(d.join("model.json")).unwrap();
    fs::write(d.join("future.json"), text.replace("ssd-model/1", "ssd-model/2")).unwrap();
    let out = ssd(d, &["score", "--model", "future.json", "in_test.bin"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("ssd-model/2"), "{}", stderr(&out));
}

#[test]
fn missing_and_malformed_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = ssd(d, &["score", "--model", "nope.json", "x.csv"]);
    assert_eq!(out.status.code(), Some(1));
    let msg = stderr(&out);
    assert!(msg.contains("nope.json") && msg.matches("os error").count() == 1, "{msg}");

    fs::write(d.join("ragged.csv"), "1,2\n3\n").unwrap();
    let out = ssd(d, &["fit", "ragged.csv", "--model", "m.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));
    assert!(!d.join("m.json").exists());
}

#[test]
fn fewshot_writes_model_and_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ssd_ok(d, &["synth", "--preset", "near-in", "--d", "32", "--n", "800", "--seed", "1", "--out", "in.bin"]);
    ssd_ok(d, &["synth", "--preset", "near-in", "--d", "32", "--n", "300", "--seed", "2", "--out", "tin.bin"]);
    ssd_ok(d, &["synth", "--preset", "near-ood", "--d", "32", "--n", "300", "--seed", "3", "--out", "tood.bin"]);
    ssd_ok(d, &["synth", "--preset", "near-ood", "--d", "32", "--n", "40", "--seed", "4", "--out", "shots.bin"]);
    let table = ssd_ok(d, &[
        "fewshot", "--in", "in.bin", "--shots", "shots.bin", "--model", "fs.json",
        "--eval-in", "tin.bin", "--eval-ood", "tood.bin",
    ]);
    assert!(table.starts_with("detector\tauroc"));
    let model = FewShotModel::<f64>::load(d.join("fs.json")).unwrap();
    assert_eq!((model.k, model.n_augment), (5, 10));
    // a few-shot model is accepted wherever scores are needed
    let scores = ssd_ok(d, &["score", "--model", "fs.json", "tin.bin"]);
    assert_eq!(scores.lines().count(), 301);
    // but not by the eigen report
    let out = ssd(d, &["eigen-report", "--model", "fs.json", "--in", "tin.bin", "--ood", "tood.bin"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn eigen_report_and_sweeps_produce_tables() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    canonical(d);
    let report = ssd_ok(d, &["eigen-report", "--model", "model.json", "--in", "in_test.bin", "--ood", "ood.bin"]);
    assert_eq!(report.lines().count(), 1 + 16 + 2);
    assert!(report.contains("\nmahalanobis\t\t"));

    let sweep = ssd_ok(d, &[
        "sweep-clusters", "--in", "in.csv", "--in-test", "in_test.bin", "--ood", "ood.bin",
        "--clusters", "1,3", "--no-normalize",
    ]);
    assert_eq!(sweep.lines().count(), 3);
    assert!(tsv_field_in_row(&sweep, 1, "auroc") >= 0.95);

    let aug = ssd_ok(d, &[
        "sweep-augment", "--in", "in.csv", "--shots", "ood.bin", "--in-test", "in_test.bin",
        "--ood", "ood.bin", "--augment", "1,4",
    ]);
    assert!(aug.starts_with("n_augment\t"));
    assert_eq!(aug.lines().count(), 3);
}

#[test]
fn train_toy_reports_before_and_after() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let table = ssd_ok(d, &["train-toy", "--steps", "40", "--trace-out", "trace.csv", "--encoder-out", "enc.json"]);
    assert!(table.starts_with("encoder\tauroc\tloss\nrandom\t"));
    let trace = fs::read_to_string(d.join("trace.csv")).unwrap();
    assert!(trace.starts_with("step,loss\n"));
    assert_eq!(trace.lines().count(), 41);
    assert!(tsv_field(&table, "loss") > tsv_field_in_row(&table, 2, "loss"));
}

#[test]
fn thread_cap_does_not_change_scores() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    canonical(d);
    let free = ssd_ok(d, &["score", "--model", "model.json", "ood.bin"]);
    let capped = std::process::Command::new(env!("CARGO_BIN_EXE_ssd"))
        .args(["score", "--model", "model.json", "ood.bin"])
        .current_dir(d)
        .env("SSD_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(String::from_utf8(capped.stdout).unwrap(), free);
    let bad = std::process::Command::new(env!("CARGO_BIN_EXE_ssd"))
        .args(["score", "--model", "model.json", "ood.bin"])
        .current_dir(d)
        .env("SSD_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn synth_spec_files_are_honoured() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("spec.json"),
        r#"{"kind":"gmm","components":[{"mean":[5,5],"covariance":{"type":"isotropic","value":0.01}}],"d":2,"n":50,"seed":0}"#,
    )
    .unwrap();
    ssd_ok(d, &["synth", "--spec", "spec.json", "--seed", "3", "--out", "x.csv", "--labels-out", "y.txt"]);
    let x = load_features(d.join("x.csv")).unwrap();
    assert_eq!((x.rows(), x.cols()), (50, 2));
    assert!(x.as_slice().iter().all(|v| (v - 5.0).abs() < 1.0));
    assert_eq!(fs::read_to_string(d.join("y.txt")).unwrap(), "0\n".repeat(50));
    let out = ssd(d, &["synth", "--preset", "nope", "--out", "z.csv"]);
    assert_eq!(out.status.code(), Some(1));
}
