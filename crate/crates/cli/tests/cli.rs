use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_inner-iou"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn eval(args: &[&str]) -> Value {
    let out = run(&[&["eval"], args].concat());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    json(&out)
}

#[test]
fn eval_coincident_ciou_is_zero() {
    let v = eval(&["--anchor", "0,0,10,10", "--gt", "0,0,10,10", "--loss", "ciou"]);
    assert_eq!(v["value"].as_f64(), Some(0.0));
    assert_eq!(v["terms"]["kind"], "ciou");
}

#[test]
fn eval_half_shift_iou() {
    let v = eval(&["--anchor", "0,0,10,10", "--gt", "5,0,10,10", "--loss", "iou", "--grad"]);
    assert!((v["value"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-15);
    assert!((v["grad"]["dx"].as_f64().unwrap() + 2000.0 / 22500.0).abs() < 1e-15);
    assert!(v.get("inner_iou").is_none());
}

#[test]
fn eval_inner_matches_library() {
    let v = eval(&["--anchor", "-1,2,7,5", "--gt", "1,1,6,6", "--loss", "inner-siou", "--ratio", "0.75"]);
    let a = inner_iou::BBox::new(-1.0, 2.0, 7.0, 5.0).unwrap();
    let g = inner_iou::BBox::new(1.0, 1.0, 6.0, 6.0).unwrap();
    let spec = inner_iou::LossSpec::inner(inner_iou::BaseLoss::SIoU, 0.75);
    let lib = inner_iou::loss_inner(&spec, &a, &g).unwrap();
    assert_eq!(v["value"].as_f64(), Some(lib.loss));
    assert_eq!(v["loss"], "Inner-SIoU(0.75)");
    assert_eq!(v["inner_iou"].as_f64(), lib.inner_iou);
}

#[test]
fn eval_usage_errors_exit_2() {
    let cases: [&[&str]; 5] = [
        &["--anchor", "0,0,10", "--gt", "0,0,1,1", "--loss", "iou"],
        &["--anchor", "0,0,-1,1", "--gt", "0,0,1,1", "--loss", "iou"],
        &["--anchor", "0,0,1,1", "--gt", "0,0,1,1", "--loss", "focal"],
        &["--anchor", "0,0,1,1", "--gt", "0,0,1,1", "--loss", "inner-ciou"],
        &["--anchor", "0,0,1,1", "--gt", "0,0,1,1", "--loss", "ciou", "--ratio", "0.8"],
    ];
    for args in cases {
        let out = run(&[&["eval"], args].concat());
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
    let out = run(&["eval", "--anchor", "0,0,1,1", "--gt", "0,0,1,1", "--loss", "focal"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("inner-giou"));
}

fn sim(dir: &Path, extra: &[&str]) -> Output {
    let out_dir = dir.to_str().unwrap();
    run(&[&["sim", "--out", out_dir, "--n-points", "4", "--iterations", "10"], extra].concat())
}

#[test]
fn sim_writes_summary_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = sim(dir.path(), &["--scenario", "low", "--per-case"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let mut lines = summary.lines();
    assert_eq!(lines.next(), Some("spec,iteration,total_error"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2 * 11);
    assert_eq!(rows[0][0], "CIoU");
    assert_eq!(rows[11][0], "Inner-CIoU(1.2)");
    assert!(!summary.contains('\r'));
    assert!(rows.iter().all(|r| r[2].contains('e')));

    let cases = fs::read_to_string(dir.path().join("cases.csv")).unwrap();
    assert_eq!(cases.lines().count(), 1 + 2 * 7 * 7 * 7 * 4);

    let manifest: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["cases"], 1372);
    assert_eq!(manifest["config_digest"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["spec_list"][1], "Inner-CIoU(1.2)");
}

#[test]
fn sim_digest_is_stable_and_seed_sensitive() {
    let digest = |seed: &str| {
        let dir = tempfile::tempdir().unwrap();
        assert!(sim(dir.path(), &["--seed", seed]).status.success());
        let m: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
        m["config_digest"].as_str().unwrap().to_string()
    };
    assert_eq!(digest("3"), digest("3"));
    assert_ne!(digest("3"), digest("4"));
}

#[test]
fn sim_config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");

    let out = sim(dir.path(), &["--config", "/nonexistent/cfg.json"]);
    assert_eq!(out.status.code(), Some(2));

    fs::write(&cfg, r#"{"n_points": 4, "bogus": 1}"#).unwrap();
    let out = sim(dir.path(), &["--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));

    fs::write(&cfg, r#"{"radius": [9, 6]}"#).unwrap();
    let out = sim(dir.path(), &["--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("radius"));

    let out = sim(dir.path(), &["--step-size", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("step_size"));
}

#[test]
fn sim_config_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"n_points": 2, "iterations": 3, "specs": [{"base": "giou"}, {"base": "siou", "inner": 0.8, "siou": {"theta": 2}}]}"#,
    )
    .unwrap();
    let out = run(&["sim", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert!(summary.contains("\nGIoU,3,"));
    assert!(summary.contains("\nInner-SIoU(0.8),0,"));
}

#[test]
fn sweep_defaults_pass() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("sweep.csv");
    let report = dir.path().join("report.json");
    let out = run(&["sweep", "--out", csv.to_str().unwrap(), "--report", report.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["all_pass"], true);
    assert_eq!(v, serde_json::from_str::<Value>(&fs::read_to_string(&report).unwrap()).unwrap());

    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next(), Some("deviation,iou_8,absgrad_8,iou_10,absgrad_10,iou_12,absgrad_12"));
    assert_eq!(text.lines().count(), 602);
}

#[test]
fn sweep_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("sweep.csv");
    let csv = csv.to_str().unwrap();

    assert_eq!(run(&["sweep", "--out", csv, "--aux-sides", "10"]).status.code(), Some(2));
    assert_eq!(run(&["sweep", "--out", csv, "--samples", "2"]).status.code(), Some(2));
    assert_eq!(run(&["sweep", "--out", csv, "--deviation-range", "5"]).status.code(), Some(2));

    let out = run(&["sweep", "--out", csv, "--samples", "3"]);
    assert_eq!(out.status.code(), Some(1));
    let v = json(&out);
    assert_eq!(v["conclusions"]["smaller_steeper_at_high_iou"]["verdict"], "vacuous");

    let out = run(&["sweep", "--out", csv, "--axis", "x"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json(&out)["c3_pass"], false);

    let out = run(&["sweep", "--out", csv, "--deviation-range", "-12,12", "--samples", "241"]);
    assert_eq!(out.status.code(), Some(0));
}
