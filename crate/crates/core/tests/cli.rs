use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

use concave_npg::mdp::suite;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_concave-npg"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn write_mdp(dir: &Path, name: &str, mdp: &concave_npg::TabularMdp) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, mdp.to_json_string()).unwrap();
    path
}

fn write_run_config(dir: &Path, algorithm: &str, estimator: Value, schedule_extra: Value) -> PathBuf {
    let mut schedule = json!({
        "outer_iters": 12,
        "inner_iters": 5,
        "horizon": 20,
        "step_alpha": 0.05,
        "step_beta": 0.25,
        "estimator": estimator,
    });
    for (k, v) in schedule_extra.as_object().unwrap() {
        schedule[k] = v.clone();
    }
    let config = json!({
        "mdp_path": "bandit.json",
        "scalarization": { "family": "alpha_fair", "alpha": 2.0 },
        "algorithm": algorithm,
        "schedule": { "explicit": schedule },
        "seed": 3,
        "output_path": "out/report.json",
    });
    let path = dir.join(format!("{algorithm}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

fn error_kind(out: &Output) -> String {
    let record: Value = serde_json::from_slice(out.stderr.trim_ascii()).expect("stderr carries an error record");
    record["error"]["kind"].as_str().unwrap().to_string()
}

#[test]
fn oracle_reports_uniform_bandit_values() {
    let dir = tempfile::tempdir().unwrap();
    let mdp = write_mdp(dir.path(), "bandit.json", &suite::symmetric_bandit(0.9));
    let out = run(&["oracle", "--mdp", mdp.to_str().unwrap(), "--family", "weighted_sum", "--weights", "1,1"]);
    let v = stdout_json(&out);
    let j: Vec<f64> = serde_json::from_value(v["j"].clone()).unwrap();
    assert!((j[0] - 5.0).abs() < 1e-12 && (j[1] - 5.0).abs() < 1e-12, "{v}");
}

#[test]
fn simulate_is_reproducible_and_thread_independent() {
    let dir = tempfile::tempdir().unwrap();
    let mdp = write_mdp(dir.path(), "chain.json", &suite::chain(0.9));
    let m = mdp.to_str().unwrap();
    let base = ["--seed", "5", "simulate", "--mdp", m, "--theta", "0.1,-0.2,0.3,0", "--horizon", "6", "--count", "40"];
    let a = run(&base);
    let mut threaded = vec!["--threads", "8"];
    threaded.extend_from_slice(&base);
    let b = run(&threaded);
    assert_eq!(a.stdout, b.stdout);
    let v = stdout_json(&a);
    assert_eq!(v["returns"].as_array().unwrap().len(), 40);
    let other = run(&["--seed", "6", "simulate", "--mdp", m, "--horizon", "6", "--count", "40"]);
    assert_ne!(a.stdout, other.stdout);
}

#[test]
fn bias_campaign_feeds_fit_rates() {
    let dir = tempfile::tempdir().unwrap();
    let mdp = write_mdp(dir.path(), "bandit.json", &suite::asymmetric_bandit(0.9));
    let report = dir.path().join("bias.json");
    let out = run(&[
        "--out",
        report.to_str().unwrap(),
        "estimate-bias",
        "--mdp",
        mdp.to_str().unwrap(),
        "--family",
        "kinked_quadratic",
        "--kinks",
        "0.55,0.55",
        "--kappa",
        "1",
        "--horizon",
        "1",
        "--b-list",
        "4,8,16,32,64",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let slope = v["fitted_slope_bias"]["slope"].as_f64().unwrap();

    let csv = report.with_extension("csv");
    let fit = stdout_json(&run(&["fit-rates", "--csv", csv.to_str().unwrap()]));
    let refit = fit["fit"]["slope"].as_f64().unwrap();
    assert!((slope - refit).abs() < 1e-9, "{slope} vs {refit}");
    assert!((slope + 0.5).abs() < 0.2);
}

#[test]
fn run_npg_writes_report_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    write_mdp(dir.path(), "bandit.json", &suite::symmetric_bandit(0.9));
    let cfg = write_run_config(dir.path(), "npg", json!({"kind": "empirical", "b1": 8, "b2": 4}), json!({}));
    let out = run(&["run-npg", "--config", cfg.to_str().unwrap()]);
    let summary = stdout_json(&out);
    assert_eq!(summary["total_trajectories"].as_u64().unwrap(), 12 * (8 + 5 * 4));

    let csv = std::fs::read_to_string(dir.path().join("out/report.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "k,exact_f,gap_to_ref,trajectories_cum,env_steps_cum,omega_norm,level_q");
    let cum: Vec<u64> = lines.map(|l| l.split(',').nth(3).unwrap().parse().unwrap()).collect();
    assert_eq!(cum.len(), 12);
    assert!(cum.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn seed_flag_overrides_config_seed() {
    let dir = tempfile::tempdir().unwrap();
    write_mdp(dir.path(), "bandit.json", &suite::symmetric_bandit(0.9));
    let cfg = write_run_config(dir.path(), "mlmc_npg", json!({"kind": "mlmc", "b_max": 16, "b": 2}), json!({}));
    let c = cfg.to_str().unwrap();
    let outs: Vec<Vec<u8>> = ["3", "4"]
        .iter()
        .map(|seed| {
            let path = dir.path().join(format!("seed{seed}.json"));
            let out = run(&["--seed", seed, "--out", path.to_str().unwrap(), "run-mlmc-npg", "--config", c]);
            assert!(out.status.success());
            std::fs::read(path).unwrap()
        })
        .collect();
    assert_ne!(outs[0], outs[1]);
    let default_seed = run(&["run-mlmc-npg", "--config", c]);
    assert!(default_seed.status.success());
    assert_eq!(std::fs::read(dir.path().join("out/report.json")).unwrap(), outs[0]);
}

#[test]
fn mismatched_algorithm_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    write_mdp(dir.path(), "bandit.json", &suite::symmetric_bandit(0.9));
    let cfg = write_run_config(dir.path(), "npg", json!({"kind": "empirical", "b1": 8, "b2": 4}), json!({}));
    let out = run(&["run-mlmc-npg", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_kind(&out), "config");
}

#[test]
fn missing_mdp_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_run_config(dir.path(), "npg", json!({"kind": "empirical", "b1": 8, "b2": 4}), json!({}));
    let out = run(&["run-npg", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mdp_path not found"));
}

#[test]
fn exploding_inner_step_exits_with_divergence() {
    let dir = tempfile::tempdir().unwrap();
    write_mdp(dir.path(), "bandit.json", &suite::symmetric_bandit(0.9));
    let cfg = write_run_config(
        dir.path(),
        "npg",
        json!({"kind": "empirical", "b1": 8, "b2": 4}),
        json!({"step_beta": 1e12, "inner_iters": 60, "theta_init": [1.0, 0.0]}),
    );
    let out = run(&["run-npg", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(error_kind(&out), "divergence");
}

#[test]
fn oversized_enumeration_exits_with_budget_refusal() {
    let dir = tempfile::tempdir().unwrap();
    let mdp = write_mdp(dir.path(), "chain.json", &suite::chain(0.9));
    let out = run(&[
        "estimate-bias",
        "--mdp",
        mdp.to_str().unwrap(),
        "--alpha",
        "2",
        "--horizon",
        "4",
        "--b-list",
        "64,128,256",
        "--budget",
        "1000",
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(error_kind(&out), "budget");
}

#[test]
fn bad_arguments_exit_with_config_code() {
    assert_eq!(run(&["oracle"]).status.code(), Some(2));
    assert_eq!(run(&["--threads", "0", "fit-rates", "--csv", "nope.csv"]).status.code(), Some(2));
    assert_eq!(run(&["fit-rates", "--csv", "/nonexistent/file.csv"]).status.code(), Some(2));
}

#[test]
fn shipped_configs_load_and_the_theorem_schedule_runs() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["npg_bandit.json", "mlmc_bandit.json", "mlmc_theorem1.json"] {
        concave_npg::harness::RunConfig::load(&configs.join(name)).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("thm.json");
    let cfg = configs.join("mlmc_theorem1.json");
    let status = run(&["--out", out.to_str().unwrap(), "run-mlmc-npg", "--config", cfg.to_str().unwrap()]);
    let summary = stdout_json(&status);
    assert!(summary["total_trajectories"].as_u64().unwrap() > 0);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["run"]["config_echo"]["schedule"]["theorem"], "theorem1");
}
