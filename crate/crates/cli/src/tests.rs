use std::path::Path;

use clap::Parser;
use serde_json::Value;

use crate::args::Cli;
use crate::error::CliError;
use crate::execute;

fn stratx(args: &[&str]) -> Result<Vec<u8>, CliError> {
    let cli = Cli::try_parse_from(std::iter::once("stratx").chain(args.iter().copied())).expect("arguments parse");
    execute(&cli)
}

fn stdout_json(out: Result<Vec<u8>, CliError>) -> Value {
    let bytes = out.unwrap_or_else(|e| panic!("failed: {}", e.json_line()));
    serde_json::from_slice(&bytes).expect("output is JSON")
}

fn failure(out: Result<Vec<u8>, CliError>) -> CliError {
    out.err().expect("command should fail")
}

/// 60 units in two blocks with smooth deterministic covariates; the
/// outcome depends on x1 only.
fn write_units(path: &Path, with_assignment: bool) {
    let mut text = String::from("unit,block,w1,w2,x1,x2,x3,y");
    if with_assignment {
        text.push_str(",Z");
    }
    text.push('\n');
    for i in 0..60 {
        let t = i as f64;
        let (w1, w2) = ((0.7 * t).sin(), (1.3 * t + 0.4).cos());
        let (x1, x2, x3) = ((0.9 * t + 1.0).sin(), (0.37 * t).cos(), (2.1 * t).sin());
        let z = ((i * 7) % 4 < 2) as u8;
        let y = 1.0 + 2.0 * x1 + 0.3 * (5.0 * t).sin() + z as f64;
        text.push_str(&format!("u{i},{},{w1},{w2},{x1},{x2},{x3},{y}", if i < 30 { "A" } else { "B" }));
        if with_assignment {
            text.push_str(&format!(",{z}"));
        }
        text.push('\n');
    }
    std::fs::write(path, text).unwrap();
}

#[test]
fn design_with_unit_acceptance_uses_one_draw() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("units.csv");
    write_units(&input, false);
    let out = stratx(&[
        "design", "--input", input.to_str().unwrap(), "--block", "block", "--design-cols", "w1,w2",
        "--design", "strat-rerand", "--pa", "1",
    ]);
    let v = stdout_json(out);
    assert_eq!(v["draws_used"], 1);
    let z = v["Z"].as_array().unwrap();
    assert_eq!(z.len(), 60);
    assert_eq!(z.iter().filter(|x| x.as_u64() == Some(1)).count(), 30);
}

#[test]
fn design_writes_augmented_csv_and_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("units.csv");
    write_units(&input, false);
    let run = |seed: &str, out: &Path| {
        stdout_json(stratx(&[
            "design", "--input", input.to_str().unwrap(), "--block", "block", "--design-cols", "w1,w2",
            "--design", "strat-rerand", "--pa", "0.05", "--seed", seed, "--out", out.to_str().unwrap(),
        ]))
    };
    let a = run("11", &dir.path().join("a"));
    let b = run("11", &dir.path().join("b"));
    assert_eq!(a, b);
    let csv = std::fs::read_to_string(dir.path().join("a/design.csv")).unwrap();
    assert!(csv.lines().next().unwrap().ends_with(",Z"));
    assert_eq!(csv.lines().count(), 61);
    assert!(a["mahalanobis"].as_f64().unwrap() <= a["threshold_a"].as_f64().unwrap());
}

#[test]
fn collinear_design_covariates_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("units.csv");
    let mut text = String::from("block,w1,w2\n");
    for i in 0..20 {
        let w1 = (i as f64).sin();
        text.push_str(&format!("{},{w1},{}\n", i % 2, 3.0 * w1 - 1.0));
    }
    std::fs::write(&input, text).unwrap();
    let out = stratx(&["design", "--input", input.to_str().unwrap(), "--block", "block", "--design-cols", "w1,w2", "--design", "strat-rerand"]);
    let err = failure(out);
    assert_eq!(err.code, 2);
    assert_eq!(err.details.unwrap()["collinear_column"], "w2");
}

#[test]
fn exhausted_draw_budget_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("units.csv");
    write_units(&input, false);
    let out = stratx(&[
        "design", "--input", input.to_str().unwrap(), "--block", "block", "--design-cols", "w1,w2",
        "--design", "strat-rerand", "--pa", "1e-7", "--max-draws", "3",
    ]);
    let err = failure(out);
    assert_eq!(err.code, 3);
    assert_eq!(err.kind, "max_draws_exceeded");
}

#[test]
fn toy_analysis_matches_hand_computation() {
    // block A: treated 3, 5; control 1, 2.  block B: treated 10, 14; control 7, 6.
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("toy.csv");
    std::fs::write(&input, "b,z,y\nA,1,3\nA,1,5\nA,0,1\nA,0,2\nB,1,10\nB,1,14\nB,0,7\nB,0,6\n").unwrap();
    let out = stratx(&["analyze", "--input", input.to_str().unwrap(), "--block", "b", "--assignment", "z", "--outcome", "y"]);
    let v = stdout_json(out);
    let reports = v["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 1, "no covariates means unadj only");
    let r = &reports[0];
    // τ = ½(4 − 1.5) + ½(12 − 6.5); var = ¼(2/2 + 0.5/2) + ¼(8/2 + 0.5/2)
    let (tau, var) = (4.0, 1.375);
    assert!((r["tau_hat"].as_f64().unwrap() - tau).abs() < 1e-12);
    assert!((r["var_hat"].as_f64().unwrap() - var).abs() < 1e-12);
    let half = 1.959_963_984_540_054 * var.sqrt();
    assert!((r["ci"][0].as_f64().unwrap() - (tau - half)).abs() < 1e-9);
    assert!((r["ci"][1].as_f64().unwrap() - (tau + half)).abs() < 1e-9);
}

#[test]
fn analysis_reports_every_method() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("obs.csv");
    write_units(&input, true);
    let out_dir = dir.path().join("out");
    let out = stratx(&[
        "analyze", "--input", input.to_str().unwrap(), "--block", "block", "--assignment", "Z", "--outcome", "y",
        "--covariates", "x1,x2,x3", "--design-cols", "w1,w2", "--pa", "0.1", "--out", out_dir.to_str().unwrap(),
    ]);
    let v = stdout_json(out);
    let reports = v["reports"].as_array().unwrap();
    let methods: Vec<&str> = reports.iter().map(|r| r["method"].as_str().unwrap()).collect();
    assert_eq!(methods, ["unadj", "unadj", "lasso", "lasso2"]);
    assert_eq!(reports[1]["rerand_adjusted"], true);
    assert!(reports[1]["rerand_parts"]["r2_hat"].as_f64().unwrap() >= 0.0);
    assert_eq!(reports[2]["s_hat"].as_array().unwrap().len(), 2);
    assert_eq!(reports[3]["s_hat"].as_array().unwrap().len(), 1);
    // x1 drives the outcome, so adjustment must shrink the variance
    assert!(reports[3]["var_hat"].as_f64().unwrap() < reports[0]["var_hat"].as_f64().unwrap());
    let csv = std::fs::read_to_string(out_dir.join("analysis.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(out_dir.join("analysis.json").exists());
}

#[test]
fn missing_outcome_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("obs.csv");
    write_units(&input, true);
    let out = stratx(&["analyze", "--input", input.to_str().unwrap(), "--block", "block", "--assignment", "Z"]);
    let err = failure(out);
    assert_eq!(err.code, 2);
    let line: Value = serde_json::from_str(&err.json_line()).unwrap();
    assert_eq!(line["exit_code"], 2);
}

#[test]
fn single_cell_simulation_writes_three_files() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("sim");
    let out = stratx(&[
        "simulate", "--scenario", "ms", "--n", "200", "--block", "eq", "--rerand", "no", "--replications", "10",
        "--bootstrap", "20", "--out", out_dir.to_str().unwrap(),
    ]);
    let v = stdout_json(out);
    assert_eq!(v.as_array().unwrap().len(), 1);
    let mut files: Vec<String> =
        std::fs::read_dir(&out_dir).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    files.sort();
    assert_eq!(files, ["ms_n200_eq_rand.estimates.csv", "table_ms.csv", "table_ms.json"]);
    let estimates = std::fs::read_to_string(out_dir.join("ms_n200_eq_rand.estimates.csv")).unwrap();
    assert_eq!(estimates.lines().count(), 11);
}

#[test]
fn simulation_is_identical_across_thread_counts() {
    let args = |threads: &'static str| {
        vec![
            "--threads", threads, "simulate", "--n", "200", "--block", "uneq", "--rerand", "yes", "--replications", "4",
            "--bootstrap", "10", "--pa", "0.1", "--seed", "77",
        ]
    };
    let one = stdout_json(stratx(&args("1")));
    let three = stdout_json(stratx(&args("3")));
    assert_eq!(one, three);
}

#[test]
fn invalid_simulation_arguments_exit_two() {
    let usage = Cli::try_parse_from(["stratx", "simulate", "--scenario", "bogus"]).unwrap_err();
    assert_eq!(usage.exit_code(), 2);
    let err = failure(stratx(&["simulate", "--n", "0", "--replications", "1"]));
    assert_eq!(err.code, 2);
    assert_eq!(err.kind, "simulation_config");
}

#[test]
fn property_checks_pass_and_detect_a_wrong_bound() {
    let ok = stratx(&["check", "--draws", "2000", "--kkt-problems", "5"]);
    let report = stdout_json(ok);
    assert!(report["results"].as_array().unwrap().iter().all(|r| r["passed"] == true));

    let bad = stratx(&["check", "--draws", "2000", "--kkt-problems", "5", "--inject-sigma-scale", "0.1"]);
    let err = failure(bad);
    assert_eq!(err.code, 1);
    assert_eq!(err.kind, "check_failed");
    assert!(!err.details.unwrap().as_array().unwrap().is_empty());
}

#[test]
fn schema_file_assigns_roles_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("obs.csv");
    write_units(&input, true);
    let schema = dir.path().join("schema.json");
    std::fs::write(&schema, r#"{"outcome": "y", "assignment": "Z", "block": "block", "covariates": ["x1", "x2"]}"#).unwrap();
    let base = ["analyze", "--input", input.to_str().unwrap(), "--schema", schema.to_str().unwrap(), "--method", "lasso2"];
    let v = stdout_json(stratx(&base));
    assert_eq!(v["covariates"], serde_json::json!(["x1", "x2"]));
    let mut overridden = base.to_vec();
    overridden.extend(["--covariates", "x3"]);
    let v = stdout_json(stratx(&overridden));
    assert_eq!(v["covariates"], serde_json::json!(["x3"]));
}
