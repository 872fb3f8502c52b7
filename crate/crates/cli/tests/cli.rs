use std::path::Path;
use std::process::{Command, Output};

fn mpi(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mpi"))
        .args(args)
        .current_dir(dir)
        .env("MPI_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = mpi(dir, args);
    assert!(out.status.success(), "mpi {args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--seed", "42", "--days", "1826", "--out", "a.csv"]);
    ok(d, &["synth", "--seed", "42", "--days", "1826", "--out", "b.csv"]);
    ok(d, &["synth", "--seed", "43", "--days", "1826", "--out", "c.csv"]);
    let a = read(d, "a.csv");
    assert_eq!(a, read(d, "b.csv"));
    assert_ne!(a, read(d, "c.csv"));
    assert_eq!(a.lines().count(), 1827);
    assert!(a.starts_with("date,aod,temperature,humidity,wind_speed,solar_irradiance\n2020-01-01,"));
}

#[test]
fn synth_flags_override_spec_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "spec.json", r#"{"days": 5, "start": "2023-03-01"}"#);
    ok(d, &["synth", "--spec", "spec.json", "--out", "a.csv"]);
    let a = read(d, "a.csv");
    assert_eq!(a.lines().count(), 6);
    assert!(a.lines().nth(1).unwrap().starts_with("2023-03-01,"));
    ok(d, &["synth", "--spec", "spec.json", "--days", "9", "--out", "b.csv"]);
    assert_eq!(read(d, "b.csv").lines().count(), 10);
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for args in [
        &["synth", "--out", "x.csv", "--bogus"][..],
        &["frobnicate"],
        &["forecast", "--scores", "s.csv", "--out", "f.csv"],
        &["forecast", "--scores", "s.csv", "--horizon", "0", "--out", "f.csv"],
        &["forecast", "--scores", "s.csv", "--horizon", "521", "--out", "f.csv"],
    ] {
        let out = mpi(d, args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(stderr(&out).contains("error:"), "{args:?}");
    }
    let out = mpi(d, &["synth", "--out", "x.csv", "--bogus"]);
    assert!(stderr(&out).contains("Usage: mpi synth"));
    assert!(!d.join("f.csv").exists());
}

#[test]
fn missing_input_exits_1_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = mpi(dir.path(), &["index", "--input", "no_such_file.csv", "--out", "s.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("no_such_file.csv"));
}

#[test]
fn unwritable_output_exits_1_and_leaves_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = mpi(d, &["synth", "--days", "10", "--out", "missing_dir/env.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("missing_dir/env.csv"));
    // The target is a directory, so the rename fails after the temp write.
    std::fs::create_dir(d.join("taken")).unwrap();
    let out = mpi(d, &["synth", "--days", "10", "--out", "taken"]);
    assert_eq!(out.status.code(), Some(1));
    let names: Vec<String> = std::fs::read_dir(d)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names, ["taken"]);
}

#[test]
fn invalid_records_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(
        d,
        "bad.csv",
        "date,aod,temperature,humidity,wind_speed,solar_irradiance\n2024-01-01,0.5,30,140,3,250\n",
    );
    let out = mpi(d, &["ingest", "--input", "bad.csv", "--report", "report.json", "--out", "clean.csv"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("humidity"));
    assert!(!d.join("clean.csv").exists());
    let report: serde_json::Value = serde_json::from_str(&read(d, "report.json")).unwrap();
    assert_eq!(report["verdict"], "fail");

    write(d, "schema.csv", "date,temp\n2024-01-01,3\n");
    let out = mpi(d, &["index", "--input", "schema.csv", "--out", "s.csv"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("schema.csv"));

    write(d, "mpi.json", r#"{"weights": [1, 2]}"#);
    ok(d, &["synth", "--days", "40", "--out", "env.csv"]);
    let out = mpi(d, &["index", "--input", "env.csv", "--config", "mpi.json", "--out", "s.csv"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn ingest_fills_gaps_on_request() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(
        d,
        "gappy.csv",
        "date,aod,temperature,humidity,wind_speed,solar_irradiance\n\
         2024-01-01,0.5,30,60,3,250\n\
         2024-01-04,0.6,31,61,4,251\n",
    );
    ok(d, &["ingest", "--input", "gappy.csv", "--report", "r.json", "--out", "raw.csv"]);
    assert_eq!(read(d, "raw.csv").lines().count(), 3);
    let report: serde_json::Value = serde_json::from_str(&read(d, "r.json")).unwrap();
    assert_eq!(report["verdict"], "warn");
    assert_eq!(report["gap_dates"], serde_json::json!(["2024-01-02", "2024-01-03"]));

    ok(d, &["ingest", "--input", "gappy.csv", "--fill", "--out", "filled.csv"]);
    let filled = read(d, "filled.csv");
    assert_eq!(filled.lines().count(), 5);
    assert!(filled.contains("2024-01-03,0.5,30,60,3,250\n"));
}

#[test]
fn index_derives_eof_weights() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--days", "365", "--out", "env.csv"]);
    ok(d, &["index", "--input", "env.csv", "--derive-eof", "--config-out", "mpi.json", "--out", "s.csv"]);
    let config: serde_json::Value = serde_json::from_str(&read(d, "mpi.json")).unwrap();
    let weights: Vec<f64> = config["weights"]
        .as_object()
        .unwrap()
        .values()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert_eq!(weights.len(), 5);
    assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert_ne!(weights, [0.35, 0.25, 0.20, 0.15, 0.05]);
    let scores = read(d, "s.csv");
    assert!(scores.starts_with("date,score,label\n2020-01-03,"));
    assert_eq!(scores.lines().count(), 364);
}

#[test]
fn featurize_options() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--days", "120", "--out", "env.csv"]);
    ok(d, &["featurize", "--input", "env.csv", "--out", "f.csv", "--scaler-out", "f.json"]);
    ok(d, &["featurize", "--input", "env.csv", "--lags", "--train-days", "60", "--out", "g.csv", "--scaler-out", "g.json"]);
    let header = |name: &str| read(d, name).lines().next().unwrap().split(',').count();
    assert_eq!(header("f.csv"), 15);
    assert_eq!(header("g.csv"), 27);
    assert_ne!(read(d, "f.json"), read(d, "g.json"));
    let out = mpi(d, &["featurize", "--input", "env.csv", "--train-days", "500", "--out", "h.csv", "--scaler-out", "h.json"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn predict_holdout_needs_split() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--days", "200", "--out", "env.csv"]);
    ok(d, &["featurize", "--input", "env.csv", "--out", "f.csv", "--scaler-out", "f.json"]);
    ok(d, &["index", "--input", "env.csv", "--out", "s.csv"]);
    write(d, "p.json", r#"{"n_rounds": 5, "max_depth": 2}"#);
    ok(d, &["train", "--features", "f.csv", "--labels", "s.csv", "--params", "p.json", "--out", "m.json"]);
    ok(d, &["predict", "--model", "m.json", "--features", "f.csv", "--out", "all.csv"]);
    assert_eq!(read(d, "all.csv").lines().count(), 200 - 6 + 1);
    let out = mpi(d, &["predict", "--model", "m.json", "--features", "f.csv", "--holdout", "--out", "h.csv"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("holdout"));

    // A model trained on other columns is refused.
    ok(d, &["featurize", "--input", "env.csv", "--lags", "--out", "g.csv", "--scaler-out", "g.json"]);
    let out = mpi(d, &["predict", "--model", "m.json", "--features", "g.csv", "--out", "x.csv"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn eval_writes_json_and_text() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "pred.csv", "date,label\n2024-01-01,Low\n2024-01-02,High\n2024-01-03,Medium\n2024-01-04,Low\n");
    write(
        d,
        "true.csv",
        "date,score,label\n2024-01-01,0.1,Low\n2024-01-02,0.7,High\n2024-01-03,0.1,Low\n2024-01-04,0.0,Low\n2024-01-05,0.3,Medium\n",
    );
    ok(d, &["eval", "--pred", "pred.csv", "--true", "true.csv", "--out", "r.json", "--text", "r.txt"]);
    let r: serde_json::Value = serde_json::from_str(&read(d, "r.json")).unwrap();
    assert_eq!(r["accuracy"], 0.75);
    assert_eq!(r["total"], 4);
    assert_eq!(r["confusion"]["counts"], serde_json::json!([[2, 1, 0], [0, 0, 0], [0, 0, 1]]));
    assert_eq!(r["classes"][1]["recall"]["undefined"], true);
    assert!(read(d, "r.txt").contains("accuracy"));

    write(d, "pred2.csv", "date,label\n2025-01-01,Low\n");
    let out = mpi(d, &["eval", "--pred", "pred2.csv", "--true", "true.csv", "--out", "r2.json"]);
    assert_eq!(out.status.code(), Some(3));
    write(d, "pred3.csv", "date,label\n2024-01-01,Severe\n");
    let out = mpi(d, &["eval", "--pred", "pred3.csv", "--true", "true.csv", "--out", "r3.json"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("Severe"));
}

#[test]
fn forecast_rows_match_horizon() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--days", "730", "--out", "env.csv"]);
    ok(d, &["index", "--input", "env.csv", "--out", "s.csv"]);
    for h in ["4", "12", "52"] {
        ok(d, &["forecast", "--scores", "s.csv", "--horizon", h, "--out", "f.csv"]);
        let text = read(d, "f.csv");
        assert_eq!(text.lines().count() - 1, h.parse::<usize>().unwrap());
        assert!(text.starts_with("week_start,yhat,lower,upper,trend,seasonal,regressors\n"));
    }
    ok(d, &["featurize", "--input", "env.csv", "--out", "x.csv", "--scaler-out", "x.json"]);
    ok(
        d,
        &[
            "forecast", "--scores", "s.csv", "--regressors", "x.csv", "--regressor", "humidity", "--regressor", "aod",
            "--horizon", "8", "--json", "--out", "f.json", "--model-out", "m.json",
        ],
    );
    let f: serde_json::Value = serde_json::from_str(&read(d, "f.json")).unwrap();
    assert_eq!(f["rows"].as_array().unwrap().len(), 8);
    let m: serde_json::Value = serde_json::from_str(&read(d, "m.json")).unwrap();
    let names: Vec<&str> = m["regressors"].as_array().unwrap().iter().map(|r| r["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["humidity", "aod"]);

    let out = mpi(d, &["forecast", "--scores", "s.csv", "--regressors", "x.csv", "--regressor", "nope", "--horizon", "4", "--out", "g.csv"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn serve_refuses_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "service.json", r#"{"history": "h.csv", "mpi_config": "m.json", "classifier": "c.json", "features": "f.json"}"#);
    let out = mpi(d, &["serve", "--config", "service.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("h.csv"));
    write(d, "service.json", "{");
    let out = mpi(d, &["serve", "--config", "service.json"]);
    assert_eq!(out.status.code(), Some(3));
}
