use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn dsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dsim")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn simulate_csv(dir: &Path, n: usize) -> String {
    let path = dir.join("train.csv");
    let o = dsim(&["simulate", "--n", &n.to_string(), "--seed", "3", "--out", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    path.to_str().unwrap().to_string()
}

fn fit(dir: &Path, data: &str, extra: &[&str]) -> (Output, String) {
    let model = dir.join("model.json").to_str().unwrap().to_string();
    let mut args = vec!["fit", "--data", data, "--response", "y", "--covariates", "x1,x2", "--out", &model];
    args.extend_from_slice(extra);
    (dsim(&args), model)
}

#[test]
fn fit_then_predict_reproduces_training_index() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_csv(dir.path(), 150);
    let (o, model) = fit(dir.path(), &data, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = String::from_utf8_lossy(&o.stdout);
    assert!(summary.contains("alpha") && summary.contains("criterion"));

    let doc: Value = serde_json::from_str(&fs::read_to_string(&model).unwrap()).unwrap();
    let alpha: Vec<f64> = serde_json::from_value(doc["alpha"].clone()).unwrap();
    assert_eq!(doc["metadata"]["covariates"], serde_json::json!(["x1", "x2"]));

    let out = dir.path().join("pred.csv");
    let o = dsim(&["predict", "--model", &model, "--input", &data, "--taus", "0.1,0.5,0.9", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));

    let mut train = csv::Reader::from_path(&data).unwrap();
    let mut pred = csv::Reader::from_path(&out).unwrap();
    assert_eq!(pred.headers().unwrap().iter().collect::<Vec<_>>(), ["index", "extrapolated", "q0.1", "q0.5", "q0.9"]);
    let mut rows = 0;
    for (t, p) in train.records().zip(pred.records()) {
        let (t, p) = (t.unwrap(), p.unwrap());
        let x: Vec<f64> = (0..2).map(|i| t[i].parse().unwrap()).collect();
        let z: f64 = p[0].parse().unwrap();
        assert!((z - (alpha[0] * x[0] + alpha[1] * x[1])).abs() <= 1e-12);
        assert_eq!(&p[1], "false");
        let qs: Vec<f64> = (2..5).map(|i| p[i].parse().unwrap()).collect();
        assert!(qs[0] <= qs[1] && qs[1] <= qs[2]);
        rows += 1;
    }
    assert_eq!(rows, 150);
}

#[test]
fn missing_column_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_csv(dir.path(), 20);
    let model = dir.path().join("m.json");
    let o = dsim(&["fit", "--data", &data, "--response", "y", "--covariates", "x1,price", "--out", model.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("price"));
}

#[test]
fn bad_cell_names_row_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.csv");
    fs::write(&data, "x1,x2,y\n0.1,0.2,1.0\n0.3,oops,2.0\n").unwrap();
    let (o, _) = fit(dir.path(), data.to_str().unwrap(), &[]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains("row 2") && msg.contains("x2"), "{msg}");
}

#[test]
fn degenerate_data_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let one = dir.path().join("one.csv");
    fs::write(&one, "x1,x2,y\n0.1,0.2,1.0\n").unwrap();
    assert_eq!(fit(dir.path(), one.to_str().unwrap(), &[]).0.status.code(), Some(3));
    let constant = dir.path().join("constant.csv");
    fs::write(&constant, "x1,x2,y\n0.1,0.2,1.0\n0.5,0.1,1.0\n0.9,0.3,1.0\n").unwrap();
    assert_eq!(fit(dir.path(), constant.to_str().unwrap(), &[]).0.status.code(), Some(3));
}

#[test]
fn two_row_toy_fits() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("toy.csv");
    fs::write(&data, "x1,x2,y\n0.1,0.2,1.0\n0.7,0.4,3.0\n").unwrap();
    let (o, model) = fit(dir.path(), data.to_str().unwrap(), &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let doc: Value = serde_json::from_str(&fs::read_to_string(model).unwrap()).unwrap();
    assert!(doc["z"].as_array().unwrap().len() <= 2);
    assert!(doc["thresholds"].as_array().unwrap().len() <= 2);
}

#[test]
fn headerless_input_uses_column_indices() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("plain.tsv");
    fs::write(&data, "0.1\t0.2\t1.0\n0.7\t0.4\t3.0\n0.3\t0.9\t2.0\n").unwrap();
    let model = dir.path().join("m.json");
    let o = dsim(&[
        "fit", "--data", data.to_str().unwrap(), "--no-header", "--delimiter", "\t", "--response", "2",
        "--covariates", "0,1", "--out", model.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn predict_point_flags_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_csv(dir.path(), 80);
    let (_, model) = fit(dir.path(), &data, &["--q", "uniform:0,3", "--grid", "30", "--no-refine"]);

    let o = dsim(&["predict", "--model", &model, "--x", "5,5", "--x", "0.5,0.5", "--cdf-at", "0.5,1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout).into_owned();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "index,extrapolated,cdf0.5,cdf1");
    assert!(lines[1].split(',').nth(1) == Some("true"));
    assert!(lines[2].split(',').nth(1) == Some("false"));

    let o = dsim(&["predict", "--model", &model, "--x", "1,2,3"]);
    assert_eq!(o.status.code(), Some(4));

    let broken = dir.path().join("broken.json");
    fs::write(&broken, "{\"alpha\": [1]}").unwrap();
    let o = dsim(&["predict", "--model", broken.to_str().unwrap(), "--x", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn fit_output_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_csv(dir.path(), 100);
    let (_, model) = fit(dir.path(), &data, &[]);
    let first = fs::read_to_string(&model).unwrap();
    let (_, model) = fit(dir.path(), &data, &["--threads", "2"]);
    assert_eq!(first, fs::read_to_string(&model).unwrap());
}

#[test]
fn smoke_rates_config_gives_three_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("grid.json");
    fs::write(&cfg, r#"{"n_values": [64, 128], "reps": 3, "mc_draws": 300}"#).unwrap();
    let out = dir.path().join("rates.csv");
    let o = dsim(&["rates", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.starts_with("q,noise,theta0,measure,slope,stderr,reps,n_min,n_max"));
    assert!(stderr(&o).contains("cells 1"));
}

#[test]
fn injected_power_law_reaches_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("grid.json");
    fs::write(&cfg, r#"{"inject": {"c": 2.0, "beta": 0.3333333333333333}}"#).unwrap();
    let o = dsim(&["rates", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout).into_owned();
    for line in text.lines().skip(1) {
        assert_eq!(line.split(',').nth(4), Some("0.333333"));
    }
}

#[test]
fn single_sample_size_exits_insufficient() {
    let o = dsim(&["rates", "--n", "64", "--reps", "1"]);
    assert_eq!(o.status.code(), Some(5));
}
