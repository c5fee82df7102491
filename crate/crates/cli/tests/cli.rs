use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_scenario-prune"))
}

fn run(dir: &Path, experiment: &str, config: &str, extra: &[&str]) -> Output {
    let cfg = dir.join(format!("{experiment}.json"));
    fs::write(&cfg, config).unwrap();
    bin()
        .arg(experiment)
        .arg("--config")
        .arg(&cfg)
        .args(extra)
        .output()
        .unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|rec| rec.unwrap().iter().map(str::to_string).collect())
        .collect()
}

fn column(path: &Path, name: &str) -> Vec<String> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let idx = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records().map(|rec| rec.unwrap()[idx].to_string()).collect()
}

fn floats(values: Vec<String>) -> Vec<f64> {
    values.iter().map(|v| v.parse().unwrap()).collect()
}

fn out_dir(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

#[test]
fn regress_zero_grid_reproduces_full_solve() {
    let tmp = tempfile::tempdir().unwrap();
    let out = out_dir(tmp.path(), "o");
    let cfg = format!(r#"{{"lambda_grid": [0.0], "n_mc": 200, "output_dir": {:?}}}"#, out);
    let o = run(tmp.path(), "regress", &cfg, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let sweep = out.join("sweep.csv");
    assert_eq!(csv_rows(&sweep).len(), 1);
    assert_eq!(column(&sweep, "kappa"), vec!["0"]);
    assert_eq!(column(&sweep, "s_full"), column(&sweep, "s_reduced"));
}

#[test]
fn regress_defaults_smoke() {
    let tmp = tempfile::tempdir().unwrap();
    let out = out_dir(tmp.path(), "o");
    let o = run(tmp.path(), "regress", "{}", &["--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(csv_rows(&out.join("sweep.csv")).len(), 8);
    assert_eq!(csv_rows(&out.join("scenarios.csv")).len(), 8 * 200);
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["experiment"], "regress");
    assert_eq!(report["config"]["n"], 200);
    assert_eq!(report["train_stream"], 1);
    assert_eq!(report["eval_stream"], 2);
    assert_eq!(report["rows"].as_array().unwrap().len(), 8);
    assert_eq!(report["complete"], true);
}

#[test]
fn echoed_config_reproduces_every_output() {
    let tmp = tempfile::tempdir().unwrap();
    let first = out_dir(tmp.path(), "first");
    let cfg = format!(r#"{{"n": 80, "n_mc": 300, "seed": 4, "output_dir": {:?}}}"#, first);
    let o = run(tmp.path(), "regress", &cfg, &["--seed", "9"]);
    assert_eq!(o.status.code(), Some(0));
    let report: Value = serde_json::from_str(&fs::read_to_string(first.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 9);

    let second = out_dir(tmp.path(), "second");
    let echoed = serde_json::to_string(&report["config"]).unwrap();
    let o = run(tmp.path(), "regress", &echoed, &["--out", second.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    for f in ["scenarios.csv", "sweep.csv"] {
        assert_eq!(
            fs::read(first.join(f)).unwrap(),
            fs::read(second.join(f)).unwrap(),
            "{f}"
        );
    }
    let again: Value = serde_json::from_str(&fs::read_to_string(second.join("report.json")).unwrap()).unwrap();
    assert_eq!(again["rows"], report["rows"]);
    assert_eq!(again["full"], report["full"]);
}

#[test]
fn seed_override_changes_the_data() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (out_dir(tmp.path(), "a"), out_dir(tmp.path(), "b"));
    let cfg = r#"{"n": 40, "n_mc": 50, "lambda_grid": [0.05]}"#;
    run(
        tmp.path(),
        "regress",
        cfg,
        &["--out", a.to_str().unwrap(), "--seed", "1"],
    );
    run(
        tmp.path(),
        "regress",
        cfg,
        &["--out", b.to_str().unwrap(), "--seed", "2"],
    );
    assert_ne!(
        fs::read(a.join("scenarios.csv")).unwrap(),
        fs::read(b.join("scenarios.csv")).unwrap()
    );
}

#[test]
fn negative_bandwidth_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(
        tmp.path(),
        "ocp",
        r#"{"kernel": {"kind": "gaussian", "bandwidth": -0.5}}"#,
        &[],
    );
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("kernel.bandwidth"), "{err}");
}

#[test]
fn malformed_config_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(tmp.path(), "regress", r#"{"scaling": {"softness": "hot"}}"#, &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("scaling.softness"));
    let o = run(tmp.path(), "regress", r#"{"lamda_grid": [0.1]}"#, &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("lamda_grid"));
    let o = bin()
        .args(["regress", "--config"])
        .arg(tmp.path().join("missing.json"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn unwritable_output_dir_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let cfg = format!(
        r#"{{"n": 20, "n_mc": 20, "lambda_grid": [0.0], "output_dir": {:?}}}"#,
        blocker.join("sub")
    );
    let o = run(tmp.path(), "regress", &cfg, &[]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn failed_row_gives_nonzero_exit_but_keeps_the_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    let out = out_dir(tmp.path(), "o");
    let cfg = format!(
        r#"{{"n": 50, "n_mc": 100, "lambda_grid": [0.05, 1000.0], "output_dir": {:?}}}"#,
        out
    );
    let o = run(tmp.path(), "regress", &cfg, &[]);
    assert_eq!(o.status.code(), Some(3));
    let failure = column(&out.join("sweep.csv"), "failure");
    assert_eq!(failure.len(), 2);
    assert!(failure[0].is_empty());
    assert!(failure[1].contains("discarded"));
    assert_eq!(column(&out.join("sweep.csv"), "kappa")[1], "50");
}

#[test]
fn thread_variable_is_validated() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    fs::write(&cfg, r#"{"n": 20, "n_mc": 20, "lambda_grid": [0.0]}"#).unwrap();
    let o = bin()
        .args(["regress", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path().join("o"))
        .env("SCENARIO_PRUNE_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    let o = bin()
        .args(["regress", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path().join("o"))
        .env("SCENARIO_PRUNE_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn ocp_small_zero_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let out = out_dir(tmp.path(), "o");
    let cfg = format!(
        r#"{{"n": 20, "n_mc": 20, "lambda_grid": [0.0], "ocp": {{"substeps": 5}}, "output_dir": {:?}}}"#,
        out
    );
    let o = run(tmp.path(), "ocp", &cfg, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let sweep = out.join("sweep.csv");
    assert_eq!(column(&sweep, "kappa"), vec!["0"]);
    assert_eq!(column(&sweep, "cost_full"), column(&sweep, "cost_reduced"));
    // Full-solution and λ=0 trajectories: 20 scenarios × 51 nodes each.
    let traj = csv_rows(&out.join("trajectories.csv"));
    assert_eq!(traj.len(), 2 * 20 * 51);
    assert_eq!(traj[0][0], "full");
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["full"]["converged"], true);
}

fn reduce_config(input: &Path, out: &Path, extra: &str) -> String {
    format!(r#"{{"output_dir": {out:?}, "reduce": {{"input": {input:?}{extra}}}}}"#)
}

#[test]
fn reduce_identical_rows_at_zero_lambda() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("x.csv");
    fs::write(&input, "0.5,1.5\n".repeat(6)).unwrap();
    let out = out_dir(tmp.path(), "o");
    let o = run(
        tmp.path(),
        "reduce",
        &reduce_config(&input, &out, r#", "lambda": 0.0"#),
        &[],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for a in floats(column(&out.join("reduction.csv"), "alpha")) {
        assert!((a - 1.0 / 6.0).abs() < 1e-15);
    }
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["mmd_sq_achieved"], 0.0);
    assert_eq!(report["kappa"], 0);
}

#[test]
fn reduce_above_kill_threshold_discards_everything() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("x.csv");
    fs::write(&input, "x\n0.0\n0.4\n1.1\n2.0\n-0.7\n").unwrap();
    let out = out_dir(tmp.path(), "o");
    let o = run(
        tmp.path(),
        "reduce",
        &reduce_config(&input, &out, r#", "header": true, "lambda": 0.0"#),
        &[],
    );
    assert_eq!(o.status.code(), Some(0));
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let kill = report["kill_threshold"].as_f64().unwrap();

    let out2 = out_dir(tmp.path(), "o2");
    let extra = format!(r#", "header": true, "lambda": {}"#, kill * 1.01);
    let o = run(tmp.path(), "reduce", &reduce_config(&input, &out2, &extra), &[]);
    assert_eq!(o.status.code(), Some(0));
    let report: Value = serde_json::from_str(&fs::read_to_string(out2.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["kappa"], 5);
    assert!(column(&out2.join("reduction.csv"), "retained")
        .iter()
        .all(|r| r == "false"));
    assert_eq!(csv_rows(&out2.join("retained.csv")).len(), 0);
}

#[test]
fn reduce_retained_rows_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("x.csv");
    let mut text = String::new();
    for i in 0..40 {
        let t = i as f64 * 0.37;
        text.push_str(&format!("{},{}\n", (t * 1.3).sin() * 2.0, (t * 0.7).cos() * 1.5));
    }
    fs::write(&input, text).unwrap();
    let out = out_dir(tmp.path(), "o");
    let o = run(
        tmp.path(),
        "reduce",
        &reduce_config(&input, &out, r#", "lambda": 0.02"#),
        &[],
    );
    assert_eq!(o.status.code(), Some(0));
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let kept = report["retained"].as_array().unwrap().len();
    assert!(kept > 0 && kept < 40);

    let out2 = out_dir(tmp.path(), "o2");
    let retained = out.join("retained.csv");
    let o = run(
        tmp.path(),
        "reduce",
        &reduce_config(&retained, &out2, r#", "header": true, "lambda": 0.0"#),
        &[],
    );
    assert_eq!(o.status.code(), Some(0));
    let again: Value = serde_json::from_str(&fs::read_to_string(out2.join("report.json")).unwrap()).unwrap();
    assert_eq!(again["scenarios"], kept);
    assert_eq!(again["kappa"], 0);
    assert!(again["mmd_sq_achieved"].as_f64().unwrap() <= 1e-15);
    for a in floats(column(&out2.join("reduction.csv"), "alpha")) {
        assert!((a - 1.0 / kept as f64).abs() < 1e-12);
    }
}

#[test]
fn reduce_budget_and_weights() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("x.csv");
    let weights = tmp.path().join("w.csv");
    let xs: Vec<String> = (0..30).map(|i| format!("{}", (i as f64 * 0.61).sin() * 2.0)).collect();
    fs::write(&input, xs.join("\n")).unwrap();
    let ws: Vec<String> = (0..30).map(|i| format!("{}", 1.0 + (i % 3) as f64)).collect();
    fs::write(&weights, ws.join("\n")).unwrap();
    let out = out_dir(tmp.path(), "o");
    let extra = format!(r#", "weights": {weights:?}, "epsilon": 0.05"#);
    let o = run(tmp.path(), "reduce", &reduce_config(&input, &out, &extra), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert!(report["mmd_sq_achieved"].as_f64().unwrap().sqrt() <= 0.05 + 1e-9);
    assert_eq!(floats(column(&out.join("reduction.csv"), "weight"))[1], 2.0);

    fs::write(&weights, "1\n2\n").unwrap();
    let o = run(tmp.path(), "reduce", &reduce_config(&input, &out, &extra), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("reduce.weights"));
}

#[test]
fn reduce_ragged_csv_reports_the_line() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("x.csv");
    fs::write(&input, "1,2\n3,4\n5,6,7\n").unwrap();
    let o = run(
        tmp.path(),
        "reduce",
        &reduce_config(&input, &tmp.path().join("o"), ""),
        &[],
    );
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn ocp_defaults_follow_the_trend() {
    let tmp = tempfile::tempdir().unwrap();
    let out = out_dir(tmp.path(), "o");
    let o = run(tmp.path(), "ocp", "{}", &["--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let sweep = out.join("sweep.csv");
    let kappa: Vec<usize> = column(&sweep, "kappa").iter().map(|v| v.parse().unwrap()).collect();
    let viol = floats(column(&sweep, "violation_prob"));
    let se = floats(column(&sweep, "std_err_violation"));
    let full = floats(column(&sweep, "cost_full"));
    let reduced = floats(column(&sweep, "cost_reduced"));
    assert_eq!(kappa.len(), 6);
    assert_eq!(kappa[0], 0);
    for j in 1..kappa.len() {
        assert!(kappa[j] >= kappa[j - 1], "{kappa:?}");
        assert!(viol[j] >= viol[j - 1] - 2.0 * se[j].max(se[j - 1]), "{viol:?}");
    }
    for (r, f) in reduced.iter().zip(&full) {
        assert!(r <= &(f + 2e-4));
    }
}
