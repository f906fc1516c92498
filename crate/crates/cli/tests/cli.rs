use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn spherecov(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spherecov"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = spherecov(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn simulate(dir: &Path, extra: &[&str]) {
    let d = dir.to_str().unwrap();
    let mut args = vec!["simulate", "--out-dir", d, "--n", "6", "--r", "5", "--seed", "11"];
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn simulate_writes_dataset_and_model() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, &[]);
    let meta = json(&sim.join("data.json"));
    assert_eq!(meta["n"], 6);
    assert_eq!(meta["r_list"].as_array().unwrap().len(), 6);
    assert_eq!(meta["seed"], 11);
    assert_eq!(meta["time_ordered"], false);
    let csv = std::fs::read_to_string(sim.join("data.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 30);
    assert!(sim.join("model.json").exists());
}

#[test]
fn far1_marks_dataset_time_ordered() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, &["--far1", "0.5"]);
    assert_eq!(json(&sim.join("data.json"))["time_ordered"], true);
}

#[test]
fn simulate_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    simulate(&a, &["--sigma", "0"]);
    simulate(&b, &["--sigma", "0"]);
    let read = |p: &Path| std::fs::read(p.join("data.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn fit_then_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    let fit = tmp.path().join("fit");
    let eval = tmp.path().join("eval");
    simulate(&sim, &[]);
    let data = sim.join("data.csv");
    let stdout = ok(&[
        "fit",
        "--data",
        data.to_str().unwrap(),
        "--out-dir",
        fit.to_str().unwrap(),
        "--eta",
        "1",
    ]);
    assert!(stdout.contains("J nnz"));
    let report = json(&fit.join("report.json"));
    assert_eq!(report["diagnostics"]["dim"], 6 * 5 * 4);
    assert!(report["diagnostics"]["j_nnz_fraction"].as_f64().unwrap() > 0.0);

    ok(&[
        "eval",
        "--estimate",
        fit.join("second_moment.csv").to_str().unwrap(),
        "--mean",
        fit.join("mean.csv").to_str().unwrap(),
        "--truth",
        sim.join("model.json").to_str().unwrap(),
        "--grid",
        "50",
        "--project-psd",
        "--out-dir",
        eval.to_str().unwrap(),
    ]);
    let summary = json(&eval.join("eval.json"));
    assert_eq!(summary["grid_nodes"], 50);
    assert!(summary["l2_error"].as_f64().unwrap().is_finite());
    assert!(summary["psd"]["clipped_mass"].as_f64().unwrap() >= 0.0);
    let values = std::fs::read_to_string(eval.join("values.csv")).unwrap();
    assert_eq!(values.lines().count(), 50);
}

#[test]
fn lag_fit_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    let fit = tmp.path().join("fit");
    simulate(&sim, &["--far1", "0.5"]);
    ok(&[
        "fit",
        "--data",
        sim.join("data.csv").to_str().unwrap(),
        "--out-dir",
        fit.to_str().unwrap(),
        "--lag",
        "1",
        "--no-mean",
    ]);
    let report = json(&fit.join("report.json"));
    assert_eq!(report["lag"], 1);
    assert_eq!(report["diagnostics"]["dim"], 5 * 25);
    assert!(!fit.join("mean.csv").exists());
}

#[test]
fn cv_with_singleton_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    let cv = tmp.path().join("cv");
    simulate(&sim, &[]);
    ok(&[
        "cv",
        "--data",
        sim.join("data.csv").to_str().unwrap(),
        "--out-dir",
        cv.to_str().unwrap(),
        "--eta-grid",
        "2.0",
    ]);
    let report = json(&cv.join("cv.json"));
    assert_eq!(report["selected_eta"], 2.0);
    assert_eq!(report["k_folds"], 4);
}

#[test]
fn cv_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, &[]);
    let run = |name: &str| {
        let out = tmp.path().join(name);
        ok(&[
            "cv",
            "--data",
            sim.join("data.csv").to_str().unwrap(),
            "--out-dir",
            out.to_str().unwrap(),
            "--eta-grid",
            "0.5,1,2",
            "--seed",
            "3",
        ]);
        std::fs::read(out.join("cv.csv")).unwrap()
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn config_file_is_merged_and_flags_win() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"n": 4, "r": 3, "seed": 2}"#).unwrap();
    let sim = tmp.path().join("sim");
    ok(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        sim.to_str().unwrap(),
        "--r",
        "4",
    ]);
    let meta = json(&sim.join("data.json"));
    assert_eq!(meta["n"], 4);
    assert_eq!(meta["r_list"][0], 4);
    assert_eq!(meta["seed"], 2);
}

#[test]
fn missing_input_exits_with_io_code() {
    let tmp = tempfile::tempdir().unwrap();
    let out = spherecov(&[
        "fit",
        "--data",
        tmp.path().join("absent.csv").to_str().unwrap(),
        "--out-dir",
        tmp.path().join("fit").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert!(!tmp.path().join("fit").exists());
}

#[test]
fn bad_configuration_exits_with_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, &[]);
    let cv = tmp.path().join("cv");
    let out = spherecov(&[
        "cv",
        "--data",
        sim.join("data.csv").to_str().unwrap(),
        "--out-dir",
        cv.to_str().unwrap(),
        "--folds",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!cv.exists());

    let out = spherecov(&[
        "fit",
        "--data",
        sim.join("data.csv").to_str().unwrap(),
        "--out-dir",
        tmp.path().join("fit").to_str().unwrap(),
        "--eta",
        "-1",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_subcommand_is_rejected() {
    let out = spherecov(&["frobnicate"]);
    assert!(!out.status.success());
}
