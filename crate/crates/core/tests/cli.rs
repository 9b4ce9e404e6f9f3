use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const PATH3: &str = r#"{"graph": {"links": 3, "conflicts": [[0, 1], [1, 2]]}, "seeds": [3, 4]}"#;

fn csma_opt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_csma-opt")).args(args).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn enumerate_lists_independent_sets() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), PATH3);
    let out = dir.path().join("out");
    let run = csma_opt(&["enumerate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let s = summary(&out);
    assert_eq!(s["result"]["count"], 5);
    assert_eq!(s["result"]["schedules"], serde_json::json!([[], [0], [1], [2], [0, 2]]));
    assert_eq!(s["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(s["config"]["mode"], "enumerate");
}

#[test]
fn solve_reports_gap_bound_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), PATH3);
    let out = dir.path().join("out");
    let run = csma_opt(&["solve", "--config", &cfg, "--algo.V=5", "--out", out.to_str().unwrap()]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let s = summary(&out);
    assert_eq!(s["config"]["algo"]["V"], 5.0);
    assert!((s["gap_bound"].as_f64().unwrap() - 5f64.ln() / 5.0).abs() < 1e-15);
    let cert = &s["result"]["certificate"];
    assert!(cert["holds"].as_bool().unwrap());
    assert!(cert["gap"].as_f64().unwrap() < cert["bound"].as_f64().unwrap());
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), PATH3);
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    for args in [
        vec!["walk", "--config", cfg.as_str(), "--out", out],
        vec!["stationary", "--config", cfg.as_str(), "--out", out],
        vec!["solve", "--config", cfg.as_str(), "--algo.nope=1", "--out", out],
        vec!["solve", "--config", "/nonexistent/config.json", "--out", out],
        vec!["solve", "--config", cfg.as_str(), "--algo.V=50", "--out", out],
    ] {
        let run = csma_opt(&args);
        assert_eq!(run.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&run.stderr));
    }
    let run = csma_opt(&["stationary", "--config", &cfg, "--out", out]);
    assert!(String::from_utf8_lossy(&run.stderr).contains("ct.lambda"));
}

#[test]
fn runtime_errors_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), PATH3);
    let out = dir.path().join("out");
    // the solver cannot reach this tolerance within its iteration budget
    let run = csma_opt(&["solve", "--config", &cfg, "--oracle.tol=1e-300", "--out", out.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(3), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(summary(&out)["error"].as_str().unwrap().contains("converge"));
}

fn run_twice(mode: &str, extra: &[&str], files: &[&str]) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), PATH3);
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let mut args = vec![mode, "--config", &cfg, "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        let run = csma_opt(&args);
        assert!(run.status.success(), "{mode}: {}", String::from_utf8_lossy(&run.stderr));
        outputs.push(out);
    }
    for f in files {
        let a = std::fs::read(outputs[0].join(f)).unwrap();
        let b = std::fs::read(outputs[1].join(f)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{mode}: {f} differs");
    }
}

#[test]
fn stochastic_modes_are_byte_reproducible() {
    run_twice(
        "simulate-ct",
        &["--ct.lambda=[1,1,1]", "--ct.events=20000", "--ct.write_trace=true"],
        &["occupancy.csv", "trace_seed3.csv", "trace_seed4.csv"],
    );
    run_twice(
        "run-adaptive",
        &["--slots=3000", r#"--algo.step={"kind":"constant","b0":0.01}"#, "--q0=[0.1,10]"],
        &["trace_seed3_init0.csv", "trace_seed4_init1.csv"],
    );
    run_twice("run-dt", &["--dt.epsilon=0.1", "--dt.lambda=[2,2,2]", "--dt.horizon=100000"], &["dt.csv"]);
    run_twice(
        "tradeoff",
        &["--slots=200", "--algo.q_max=2.5", "--dt.max_attempt=[0.1,0.4]", "--workers=2"],
        &["tradeoff.csv"],
    );
}

#[test]
fn tradeoff_csv_layout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), PATH3);
    let out = dir.path().join("out");
    let run = csma_opt(&[
        "tradeoff",
        "--config",
        &cfg,
        "--slots=100",
        "--algo.q_max=2.5",
        "--dt.max_attempt=[0.2,0.4]",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let csv = std::fs::read_to_string(out.join("tradeoff.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "epsilon,seed,efficiency,max_E,beta,collision_rate");
    assert_eq!(lines.len(), 1 + 2 * 2);
    let eps: Vec<f64> = lines[1..].iter().map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert!(eps.windows(2).all(|w| w[0] <= w[1]));
    let s = summary(&out);
    assert_eq!(s["result"]["points"].as_array().unwrap().len(), 2);
    assert_eq!(s["result"]["points"][0]["runs"].as_array().unwrap().len(), 2);
    assert!(s["efficiency_metric"].as_str().unwrap().contains("log"));
}

#[test]
fn ode_and_stationary_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), PATH3);
    let out = dir.path().join("out");
    let run = csma_opt(&["ode", "--config", &cfg, "--ode.horizon=1", "--out", out.to_str().unwrap()]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let traj = std::fs::read_to_string(out.join("trajectory_init0.csv")).unwrap();
    assert!(traj.starts_with("time,q_0,q_1,q_2\n"));
    assert_eq!(traj.lines().count(), 1 + 101);

    let run = csma_opt(&["stationary", "--config", &cfg, "--ct.lambda=[1,1,1]", "--out", out.to_str().unwrap()]);
    assert!(run.status.success());
    let csv = std::fs::read_to_string(out.join("stationary.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("index,mask,probability"));
    assert_eq!(csv.lines().nth(5), Some("4,5,0.2"));
}
