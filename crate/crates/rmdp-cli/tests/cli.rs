//! End-to-end tests of the `rmdp` binary: every subcommand runs as a child
//! process and is checked on exit status, stdout/stderr content, and artifact
//! bytes. Workloads are kept tiny so the whole file runs in seconds.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rmdp::mdp::{Kernel, TabularMdp};
use rmdp::save_mdp;

fn rmdp_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rmdp"))
}

fn run(args: &[&str]) -> Output {
    rmdp_bin().args(args).output().expect("spawning the rmdp binary")
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("stdout is UTF-8")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("stderr is UTF-8")
}

/// Two-state chain: state 0 steps to state 1 with no reward, state 1 pays 1
/// per step forever. V(1) = 1/(1-gamma), V(0) = gamma * V(1).
fn chain_mdp(gamma: f64) -> TabularMdp {
    let actions = vec![vec!["go".to_string()], vec!["stay".to_string()]];
    let rewards = vec![vec![0.0], vec![1.0]];
    let transitions: Kernel = vec![vec![vec![0.0, 1.0]], vec![vec![0.0, 1.0]]];
    TabularMdp::from_parts(gamma, actions, rewards, transitions, Vec::new()).unwrap()
}

fn write_chain(dir: &Path, gamma: f64) -> PathBuf {
    let path = dir.join("chain.json");
    save_mdp(&chain_mdp(gamma), &path).unwrap();
    path
}

#[test]
fn gap_command_reports_analytic_values() {
    let out = run(&["gap", "--gamma", "0.9"]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let text = stdout_of(&out);
    assert!(text.contains("V_robust(0)"), "missing robust value line:\n{text}");
    assert!(
        text.contains("gap                = 0.04784688"),
        "gap digits missing:\n{text}"
    );
    assert!(text.contains("numeric-analytic agreement"), "agreement line missing:\n{text}");
    assert!(text.trim_end().ends_with("ok"), "agreement check not ok:\n{text}");
}

#[test]
fn bounds_command_matches_worked_example() {
    let out = run(&[
        "bounds", "--set", "tv", "--gamma", "0.9", "--eps", "0.1", "--delta", "0.1",
        "--states", "2", "--actions", "2",
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let text = stdout_of(&out);
    assert!(text.contains("K0 = 84.29947"), "K0 digits missing:\n{text}");
    assert!(text.contains("N_tv = 1803381247.98"), "N_tv digits missing:\n{text}");
}

#[test]
fn solve_reports_discounted_chain_values() {
    let dir = tempfile::tempdir().unwrap();
    let mdp_path = write_chain(dir.path(), 0.9);
    let out = run(&[
        "solve", "--mdp", mdp_path.to_str().unwrap(), "--set", "none",
        "--tol", "1e-10", "--max-iters", "1000000",
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let report: serde_json::Value = serde_json::from_str(&stdout_of(&out)).unwrap();
    let values: Vec<f64> = report["values"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert_eq!(values.len(), 2);
    assert!((values[0] - 9.0).abs() <= 1e-6, "V(0) = {}", values[0]);
    assert!((values[1] - 10.0).abs() <= 1e-6, "V(1) = {}", values[1]);
    assert_eq!(report["converged"], serde_json::Value::Bool(true));
}

#[test]
fn solve_writes_report_to_file() {
    let dir = tempfile::tempdir().unwrap();
    let mdp_path = write_chain(dir.path(), 0.9);
    let out_path = dir.path().join("report.json");
    let out = run(&[
        "solve", "--mdp", mdp_path.to_str().unwrap(), "--set", "tv", "--radius", "0.1",
        "--out", out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    assert!(report["values"].is_array());
    // Both rows are point masses, so the TV adversary moves mass to the
    // cheaper state 0 and the fixed point drops below the nominal one.
    let v1 = report["values"][1].as_f64().unwrap();
    assert!(v1 < 10.0, "worst-case value {v1} not below nominal 10");
}

#[test]
fn revi_emits_parseable_report() {
    let dir = tempfile::tempdir().unwrap();
    let mdp_path = write_chain(dir.path(), 0.9);
    let out = run(&[
        "revi", "--mdp", mdp_path.to_str().unwrap(), "--set", "tv", "--radius", "0.2",
        "--samples", "200", "--seed", "7", "--iters", "30",
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let report: serde_json::Value = serde_json::from_str(&stdout_of(&out)).unwrap();
    assert_eq!(report["iterations"], serde_json::json!(30));
    assert_eq!(report["values"].as_array().unwrap().len(), 2);
    assert_eq!(report["history"].as_array().unwrap().len(), 30);
    assert_eq!(report["converged"], serde_json::Value::Bool(true));
}

#[test]
fn missing_required_flags_exit_with_usage_error() {
    let out = run(&["solve"]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr_of(&out));
    assert!(stderr_of(&out).contains("--mdp"), "stderr: {}", stderr_of(&out));
}

#[test]
fn radius_with_none_set_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mdp_path = write_chain(dir.path(), 0.9);
    let out = run(&[
        "solve", "--mdp", mdp_path.to_str().unwrap(), "--set", "none", "--radius", "0.1",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr_of(&out).contains("--radius is meaningless"),
        "stderr: {}",
        stderr_of(&out)
    );
}

#[test]
fn robustness_mode_requires_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("never-written.csv");
    let out = run(&[
        "experiment", "gamblers", "--mode", "robustness", "--set", "tv", "--radius", "0.4",
        "--seed", "1", "--out", out_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("--sweep"), "stderr: {}", stderr_of(&out));
    assert!(!out_path.exists(), "no artifact should be written on a usage error");
}

#[test]
fn experiment_csv_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let args_for = |out: &Path, workers: &str| {
        vec![
            "experiment".to_string(), "chain".to_string(),
            "--mode".to_string(), "samples".to_string(),
            "--set".to_string(), "tv".to_string(),
            "--radius".to_string(), "0.3".to_string(),
            "--seed".to_string(), "3".to_string(),
            "--sample-grid".to_string(), "50,100".to_string(),
            "--seed-count".to_string(), "2".to_string(),
            "--iters".to_string(), "20".to_string(),
            "--workers".to_string(), workers.to_string(),
            "--out".to_string(), out.to_str().unwrap().to_string(),
        ]
    };
    let out_one = dir.path().join("one.csv");
    let out_eight = dir.path().join("eight.csv");
    let run_one = rmdp_bin().args(args_for(&out_one, "1")).output().unwrap();
    assert!(run_one.status.success(), "stderr: {}", stderr_of(&run_one));
    let run_eight = rmdp_bin().args(args_for(&out_eight, "8")).output().unwrap();
    assert!(run_eight.status.success(), "stderr: {}", stderr_of(&run_eight));
    assert!(stdout_of(&run_one).contains("wrote 4 records"), "{}", stdout_of(&run_one));

    let bytes_one = std::fs::read(&out_one).unwrap();
    let bytes_eight = std::fs::read(&out_eight).unwrap();
    assert!(!bytes_one.is_empty());
    assert_eq!(bytes_one, bytes_eight, "CSV bytes differ between worker counts");
    let text = String::from_utf8(bytes_one).unwrap();
    assert!(
        text.starts_with("experiment,family,set_kind,radius,seed,x,metric_name,metric_value"),
        "unexpected CSV header:\n{text}"
    );
}
