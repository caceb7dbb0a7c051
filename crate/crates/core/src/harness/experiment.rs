use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::output::{csv_sibling, csv_table, json_pretty, write_atomic};
use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::npg::{run_mlmc_npg, run_vanilla_npg, theorem_schedule, EstimatorConfig, NpgConfig, RunReport, Theorem};
use crate::oracle::{exact_fisher, exact_npg_direction, reference_optimum, ReferenceOptimum};
use crate::policy::PolicyParams;
use crate::scalarization::{PolicyClassConstants, Scalarization, ScalarizationConfig};

pub const DEFAULT_REFERENCE_GRID: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Npg,
    MlmcNpg,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoremBlock {
    pub epsilon: f64,
    pub which: Theorem,
    /// Defaults to `‖ω*‖` at `θ_init`.
    #[serde(default)]
    pub r0: Option<f64>,
    /// Defaults to the oracle's range-space Fisher floor at `θ_init`.
    #[serde(default)]
    pub mu: Option<f64>,
    #[serde(default)]
    pub theta_init: Option<Vec<f64>>,
    #[serde(default)]
    pub max_outer_iters: Option<usize>,
    #[serde(default)]
    pub max_inner_iters: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleConfig {
    /// The run parameters verbatim; `master_seed` is replaced by the run seed.
    Explicit(NpgConfig),
    Theorem(TheoremBlock),
}

/// A run config file. Relative paths are resolved against the file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mdp_path: PathBuf,
    pub scalarization: ScalarizationConfig,
    pub algorithm: Algorithm,
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub seed: u64,
    pub output_path: PathBuf,
    #[serde(default)]
    pub reference_grid: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read run config {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::config(format!("run config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.mdp_path = base.join(&cfg.mdp_path);
        cfg.output_path = base.join(&cfg.output_path);
        Ok(cfg)
    }
}

/// Command-line overrides applied on top of a run config.
#[derive(Clone, Debug, Default)]
pub struct RunOverrides {
    pub seed: Option<u64>,
    pub output_path: Option<PathBuf>,
    /// Refuse configs whose algorithm differs.
    pub expect_algorithm: Option<Algorithm>,
}

/// Full JSON report of one run. Contains no paths or timings, so equal
/// seeds give equal bytes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub algorithm: Algorithm,
    pub scalarization: Scalarization,
    pub reference: Option<ReferenceOptimum>,
    /// `f* − exact_f` after the last iteration.
    pub final_gap: Option<f64>,
    pub run: RunReport,
}

impl ExperimentReport {
    pub const CSV_HEADER: [&'static str; 7] =
        ["k", "exact_f", "gap_to_ref", "trajectories_cum", "env_steps_cum", "omega_norm", "level_q"];

    pub fn csv(&self) -> Result<String> {
        let f_star = self.reference.as_ref().map(|r| r.f_star);
        let h = self.run.config_echo.horizon;
        let rows: Vec<Vec<String>> = self
            .run
            .per_outer_iteration
            .iter()
            .zip(self.run.cumulative_trajectories())
            .map(|(r, cum)| {
                vec![
                    r.k.to_string(),
                    r.exact_f.to_string(),
                    f_star.map(|fs| (fs - r.exact_f).to_string()).unwrap_or_default(),
                    cum.to_string(),
                    (cum * h).to_string(),
                    r.omega_norm.to_string(),
                    r.level_q.map(|q| q.to_string()).unwrap_or_default(),
                ]
            })
            .collect();
        csv_table(&Self::CSV_HEADER, &rows)
    }

    pub fn json(&self) -> Result<String> {
        json_pretty(self)
    }

    /// Writes the JSON report to `path` and the CSV view beside it.
    pub fn write(&self, path: &Path) -> Result<(PathBuf, PathBuf)> {
        let csv_path = csv_sibling(path);
        write_atomic(path, self.json()?.as_bytes())?;
        write_atomic(&csv_path, self.csv()?.as_bytes())?;
        Ok((path.to_path_buf(), csv_path))
    }
}

/// Reference optimum when the MDP shape supports the grid search.
pub fn try_reference(mdp: &TabularMdp, f: &Scalarization, grid: usize) -> Result<Option<ReferenceOptimum>> {
    match reference_optimum(mdp, f, grid) {
        Ok(r) => Ok(Some(r)),
        Err(Error::Unsupported(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Resolves a schedule block into a concrete run config.
pub fn resolve_schedule(
    mdp: &TabularMdp,
    f: &Scalarization,
    schedule: &ScheduleConfig,
    algorithm: Algorithm,
    seed: u64,
) -> Result<NpgConfig> {
    let cfg = match schedule {
        ScheduleConfig::Explicit(c) => NpgConfig { master_seed: seed, ..c.clone() },
        ScheduleConfig::Theorem(t) => {
            let theta = match &t.theta_init {
                Some(v) => PolicyParams::from_theta(mdp.n_states, mdp.n_actions, v.clone())?,
                None => PolicyParams::zeros(mdp.n_states, mdp.n_actions),
            };
            let mu = match t.mu {
                Some(m) => m,
                None => exact_fisher(mdp, &theta)?.mu_range,
            };
            let r0 = match t.r0 {
                Some(r) => r,
                None => exact_npg_direction(mdp, &theta, f)?.norm(),
            };
            let constants = f.constants(mdp.discount, PolicyClassConstants::softmax_tabular(mu))?;
            let mut c = theorem_schedule(t.epsilon, &constants, mdp.discount, r0, t.which, seed)?;
            c.theta_init = t.theta_init.clone();
            if let Some(k) = t.max_outer_iters {
                c.outer_iters = c.outer_iters.min(k);
            }
            if let Some(n) = t.max_inner_iters {
                c.inner_iters = c.inner_iters.min(n);
            }
            c
        }
    };
    let matches = matches!(
        (algorithm, &cfg.estimator),
        (Algorithm::Npg, EstimatorConfig::Empirical { .. }) | (Algorithm::MlmcNpg, EstimatorConfig::Mlmc { .. })
    );
    if !matches {
        return Err(Error::config(format!("algorithm {algorithm:?} does not match the schedule's estimator block")));
    }
    Ok(cfg)
}

/// Runs one configured algorithm in-process and assembles the report.
pub fn execute_run(
    mdp: &TabularMdp,
    f: &Scalarization,
    algorithm: Algorithm,
    config: &NpgConfig,
    reference: Option<ReferenceOptimum>,
) -> Result<ExperimentReport> {
    let run = match algorithm {
        Algorithm::Npg => run_vanilla_npg(mdp, f, config)?,
        Algorithm::MlmcNpg => run_mlmc_npg(mdp, f, config)?,
    };
    let final_gap = reference.as_ref().map(|r| r.f_star - run.final_exact_f());
    Ok(ExperimentReport { algorithm, scalarization: f.clone(), reference, final_gap, run })
}

pub struct ExperimentOutcome {
    pub report: ExperimentReport,
    pub json_path: PathBuf,
    pub csv_path: PathBuf,
}

/// Loads a run config, executes it and writes the JSON and CSV reports.
pub fn run_experiment(config_path: &Path, overrides: &RunOverrides) -> Result<ExperimentOutcome> {
    let cfg = RunConfig::load(config_path)?;
    if let Some(expect) = overrides.expect_algorithm {
        if expect != cfg.algorithm {
            return Err(Error::config(format!("config algorithm is {:?}, this command runs {expect:?}", cfg.algorithm)));
        }
    }
    if !cfg.mdp_path.exists() {
        return Err(Error::config(format!("mdp_path not found: {}", cfg.mdp_path.display())));
    }
    let mdp = TabularMdp::load(&cfg.mdp_path)?;
    let f = cfg.scalarization.build(mdp.n_objectives, mdp.discount)?;
    let seed = overrides.seed.unwrap_or(cfg.seed);
    let npg = resolve_schedule(&mdp, &f, &cfg.schedule, cfg.algorithm, seed)?;
    let reference = try_reference(&mdp, &f, cfg.reference_grid.unwrap_or(DEFAULT_REFERENCE_GRID))?;
    let report = execute_run(&mdp, &f, cfg.algorithm, &npg, reference)?;
    let out = overrides.output_path.clone().unwrap_or(cfg.output_path);
    let (json_path, csv_path) = report.write(&out)?;
    Ok(ExperimentOutcome { report, json_path, csv_path })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::suite;

    fn write_fixture(dir: &Path, algorithm: &str, estimator: &str) -> PathBuf {
        std::fs::write(dir.join("bandit.json"), suite::symmetric_bandit(0.9).to_json_string()).unwrap();
        let cfg = format!(
            r#"{{
                "mdp_path": "bandit.json",
                "scalarization": {{"family": "alpha_fair", "alpha": 2.0, "delta": 0.05}},
                "algorithm": "{algorithm}",
                "schedule": {{"explicit": {{
                    "outer_iters": 5, "inner_iters": 4, "horizon": 10,
                    "step_alpha": 0.05, "step_beta": 0.25,
                    "estimator": {estimator}
                }}}},
                "seed": 9,
                "output_path": "out/run.json"
            }}"#
        );
        let p = dir.join("run.json");
        std::fs::write(&p, cfg).unwrap();
        p
    }

    #[test]
    fn writes_reports_with_accounting() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_fixture(dir.path(), "npg", r#"{"kind": "empirical", "b1": 3, "b2": 2}"#);
        let out = run_experiment(&p, &RunOverrides::default()).unwrap();
        let csv = std::fs::read_to_string(&out.csv_path).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "k,exact_f,gap_to_ref,trajectories_cum,env_steps_cum,omega_norm,level_q");
        assert_eq!(lines.len(), 6);
        let cums: Vec<usize> = lines[1..].iter().map(|l| l.split(',').nth(3).unwrap().parse().unwrap()).collect();
        assert_eq!(cums, vec![11, 22, 33, 44, 55]);
        assert!(out.report.reference.is_some());
        assert_eq!(out.report.run.config_echo.master_seed, 9);
    }

    #[test]
    fn missing_mdp_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_fixture(dir.path(), "npg", r#"{"kind": "empirical", "b1": 3, "b2": 2}"#);
        std::fs::remove_file(dir.path().join("bandit.json")).unwrap();
        let err = run_experiment(&p, &RunOverrides::default()).err().unwrap();
        assert!(err.to_string().starts_with("config: mdp_path not found"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn algorithm_must_match_estimator() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_fixture(dir.path(), "mlmc_npg", r#"{"kind": "empirical", "b1": 3, "b2": 2}"#);
        assert!(matches!(run_experiment(&p, &RunOverrides::default()), Err(Error::Config(_))));
        let q = write_fixture(dir.path(), "mlmc_npg", r#"{"kind": "mlmc", "b_max": 8, "b": 2}"#);
        let over = RunOverrides { expect_algorithm: Some(Algorithm::Npg), ..Default::default() };
        assert!(matches!(run_experiment(&q, &over), Err(Error::Config(_))));
        let out = run_experiment(&q, &RunOverrides { seed: Some(4), ..Default::default() }).unwrap();
        assert!(out.report.run.per_outer_iteration.iter().all(|r| r.level_q.is_some()));
        assert_eq!(out.report.run.config_echo.master_seed, 4);
    }

    #[test]
    fn theorem_schedule_resolves() {
        let mdp = suite::symmetric_bandit(0.9);
        let f = Scalarization::alpha_fair(2, 2.0, 0.5).unwrap();
        let block = TheoremBlock {
            epsilon: 0.1,
            which: Theorem::Theorem2,
            r0: None,
            mu: None,
            theta_init: Some(vec![0.5, 0.0]),
            max_outer_iters: Some(3),
            max_inner_iters: Some(5),
        };
        let cfg = resolve_schedule(&mdp, &f, &ScheduleConfig::Theorem(block), Algorithm::Npg, 1).unwrap();
        assert_eq!(cfg.outer_iters, 3);
        assert_eq!(cfg.inner_iters, 5);
        assert_eq!(cfg.horizon, 44);
        assert_eq!(cfg.estimator, EstimatorConfig::Empirical { b1: 1000, b2: 1000 });
        assert!(cfg.schedule.is_some());
    }
}
