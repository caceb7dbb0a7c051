//! Natural policy gradient: the inner stochastic linear recursion for the
//! direction `ω ≈ F^† ∇f` and the two outer loops (empirical-batch and MLMC
//! partials).

mod report;
mod schedule;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{batch_grad_fisher, mean_return, mlmc_partials, sample_batch_with_table};
use crate::mdp::{LaneBlock, Phase, TabularMdp};
use crate::oracle::{exact_values, fisher_from_occupancy};
use crate::policy::{PolicyParams, SOFTMAX_SCORE_BOUND};
use crate::scalarization::Scalarization;

pub use report::{IterationRecord, RunReport};
pub use schedule::{theorem_horizon, theorem_schedule, ScheduleNotes, Theorem};

fn default_true() -> bool {
    true
}

/// Source of the outer-iteration scalarization partials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EstimatorConfig {
    /// `B1` trajectories for `Ĵ`, `B2` per inner step.
    Empirical { b1: usize, b2: usize },
    /// MLMC partials truncated at `b_max`, `b` trajectories per inner step.
    Mlmc {
        b_max: usize,
        b: usize,
        /// Reuse the first level trajectory as the single-trajectory base term.
        #[serde(default = "default_true")]
        coupled_base: bool,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NpgConfig {
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub horizon: usize,
    pub step_alpha: f64,
    pub step_beta: f64,
    pub estimator: EstimatorConfig,
    /// Starting point of every inner solve; zero when absent.
    #[serde(default)]
    pub omega_init: Option<Vec<f64>>,
    /// Start each inner solve from the previous direction instead.
    #[serde(default)]
    pub warm_start: bool,
    #[serde(default)]
    pub master_seed: u64,
    /// Scale Fisher samples by `(1 − γ)` so their mean approximates `F`.
    #[serde(default = "default_true")]
    pub fisher_normalized: bool,
    #[serde(default)]
    pub theta_init: Option<Vec<f64>>,
    /// Recompute `β = μ(θ_k) / G_1²` from the oracle at every outer iteration.
    #[serde(default)]
    pub refresh_beta: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleNotes>,
}

impl NpgConfig {
    /// Checks counts and steps against the policy dimension `d`.
    pub fn validate(&self, d: usize) -> Result<()> {
        if self.inner_iters == 0 || self.horizon == 0 {
            return Err(Error::config("inner_iters and horizon must be at least 1"));
        }
        for (name, v) in [("step_alpha", self.step_alpha), ("step_beta", self.step_beta)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        let batches_ok = match self.estimator {
            EstimatorConfig::Empirical { b1, b2 } => b1 >= 1 && b2 >= 1,
            EstimatorConfig::Mlmc { b_max, b, .. } => b_max >= 1 && b >= 1,
        };
        if !batches_ok {
            return Err(Error::config("batch sizes must be at least 1"));
        }
        for (name, v) in [("theta_init", &self.theta_init), ("omega_init", &self.omega_init)] {
            if let Some(v) = v {
                if v.len() != d {
                    return Err(Error::config(format!("{name} has length {}, expected {d}", v.len())));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::config(format!("{name} is not finite")));
                }
            }
        }
        Ok(())
    }

    pub fn algorithm(&self) -> &'static str {
        match self.estimator {
            EstimatorConfig::Empirical { .. } => "npg",
            EstimatorConfig::Mlmc { .. } => "mlmc_npg",
        }
    }

    fn initial_policy(&self, mdp: &TabularMdp) -> Result<PolicyParams> {
        match &self.theta_init {
            Some(t) => PolicyParams::from_theta(mdp.n_states, mdp.n_actions, t.clone()),
            None => Ok(PolicyParams::zeros(mdp.n_states, mdp.n_actions)),
        }
    }

    fn initial_omega(&self, d: usize) -> DVector<f64> {
        self.omega_init.as_ref().map_or_else(|| DVector::zeros(d), |v| DVector::from_column_slice(v))
    }
}

/// Supplies the pair `(ĝ_n, F̂_n)` used at inner step `n`.
pub trait InnerSource {
    fn step(&mut self, n: usize) -> Result<(DVector<f64>, DMatrix<f64>)>;
}

/// The same `(g, F)` at every step.
#[derive(Clone, Debug)]
pub struct FixedSource {
    pub grad: DVector<f64>,
    pub fisher: DMatrix<f64>,
}

impl InnerSource for FixedSource {
    fn step(&mut self, _n: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
        Ok((self.grad.clone(), self.fisher.clone()))
    }
}

/// Fresh trajectories per step; `ĝ_n` and `F̂_n` come from the same batch.
pub struct SampledSource<'a> {
    pub mdp: &'a TabularMdp,
    pub policy: &'a PolicyParams,
    pub partials: &'a DVector<f64>,
    pub horizon: usize,
    pub batch: usize,
    pub master_seed: u64,
    pub outer: u64,
    pub fisher_normalized: bool,
}

impl InnerSource for SampledSource<'_> {
    fn step(&mut self, n: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let block = LaneBlock::new(self.master_seed, self.outer, Phase::Inner(n as u32));
        let table = self.policy.prob_table();
        let trajs = sample_batch_with_table(self.mdp, &table, self.horizon, self.batch, &block);
        batch_grad_fisher(self.mdp, self.policy, self.partials, &trajs, self.fisher_normalized)
    }
}

/// Runs exactly `n_iters` steps of `ω ← ω − β(F̂_n ω − ĝ_n)` and returns `ω_N`.
///
/// `observe` sees `(0, ω_0)` and then `(n + 1, ω_{n+1})` after every step.
pub fn solve_direction(
    source: &mut impl InnerSource,
    n_iters: usize,
    beta: f64,
    omega_init: DVector<f64>,
    mut observe: impl FnMut(usize, &DVector<f64>),
) -> Result<DVector<f64>> {
    if n_iters == 0 {
        return Err(Error::config("inner_iters must be at least 1"));
    }
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::config(format!("step_beta must be positive, got {beta}")));
    }
    let mut omega = omega_init;
    observe(0, &omega);
    for n in 0..n_iters {
        let (g, f) = source.step(n)?;
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("gradient estimate not finite at inner step {n}")));
        }
        let residual = &f * &omega - g;
        omega -= residual * beta;
        if omega.iter().any(|x| !x.is_finite()) {
            return Err(Error::Divergence { outer: None, inner: n });
        }
        observe(n + 1, &omega);
    }
    Ok(omega)
}

fn at_outer(k: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Divergence { outer: None, inner } => Error::Divergence { outer: Some(k), inner },
        other => other,
    }
}

struct OracleView {
    f: f64,
    j: Vec<f64>,
    grad: DVector<f64>,
    fisher: DMatrix<f64>,
    mu: f64,
}

fn oracle_view(mdp: &TabularMdp, policy: &PolicyParams, f: &Scalarization) -> Result<OracleView> {
    let ev = exact_values(mdp, policy)?;
    let grad = ev.jacobian.transpose() * f.grad(ev.j.as_slice())?;
    let spec = fisher_from_occupancy(policy, &ev.occupancy);
    Ok(OracleView {
        f: f.value(ev.j.as_slice())?,
        j: ev.j.iter().copied().collect(),
        grad,
        fisher: spec.matrix,
        mu: spec.mu_range,
    })
}

/// Partials and accounting produced at the start of an outer iteration.
struct OuterDraw {
    partials: DVector<f64>,
    inner_batch: usize,
    outer_trajectories: usize,
    level_q: Option<u32>,
    truncated: Option<bool>,
}

enum Mode {
    Sampled,
    Exact,
}

fn outer_loop(mdp: &TabularMdp, f: &Scalarization, config: &NpgConfig, mode: Mode, algorithm: &str) -> Result<RunReport> {
    let d = mdp.n_states * mdp.n_actions;
    config.validate(d)?;
    if f.n_objectives != mdp.n_objectives {
        return Err(Error::config("scalarization and MDP disagree on the number of objectives"));
    }
    let mut policy = config.initial_policy(mdp)?;
    let omega_init = config.initial_omega(d);
    let mut prev_omega = omega_init.clone();
    let mut beta = config.step_beta;
    let mut view = oracle_view(mdp, &policy, f)?;
    let initial_exact_f = view.f;
    let mut records = Vec::with_capacity(config.outer_iters);
    let h = config.horizon;

    for k in 0..config.outer_iters {
        if config.refresh_beta {
            beta = view.mu / (SOFTMAX_SCORE_BOUND * SOFTMAX_SCORE_BOUND);
        }
        let omega0 = if config.warm_start && k > 0 { prev_omega.clone() } else { omega_init.clone() };
        let (omega, draw) = match mode {
            Mode::Exact => {
                let mut src = FixedSource { grad: view.grad.clone(), fisher: view.fisher.clone() };
                let omega = solve_direction(&mut src, config.inner_iters, beta, omega0, |_, _| {}).map_err(at_outer(k))?;
                let draw = OuterDraw {
                    partials: DVector::zeros(0),
                    inner_batch: 0,
                    outer_trajectories: 0,
                    level_q: None,
                    truncated: None,
                };
                (omega, draw)
            }
            Mode::Sampled => {
                let draw = draw_partials(mdp, &policy, f, config, k)?;
                let mut src = SampledSource {
                    mdp,
                    policy: &policy,
                    partials: &draw.partials,
                    horizon: h,
                    batch: draw.inner_batch,
                    master_seed: config.master_seed,
                    outer: k as u64,
                    fisher_normalized: config.fisher_normalized,
                };
                let omega = solve_direction(&mut src, config.inner_iters, beta, omega0, |_, _| {}).map_err(at_outer(k))?;
                (omega, draw)
            }
        };
        policy = policy.update(config.step_alpha, &omega)?;
        view = oracle_view(mdp, &policy, f)?;
        records.push(IterationRecord {
            k,
            exact_f: view.f,
            exact_j: view.j.clone(),
            trajectories_this_iter: draw.outer_trajectories + config.inner_iters * draw.inner_batch,
            omega_norm: omega.norm(),
            grad_norm_exact: view.grad.norm(),
            level_q: draw.level_q,
            truncated: draw.truncated,
            step_beta: beta,
        });
        prev_omega = omega;
    }

    let total_trajectories = records.iter().map(|r| r.trajectories_this_iter).sum::<usize>();
    Ok(RunReport {
        algorithm: algorithm.to_string(),
        initial_exact_f,
        per_outer_iteration: records,
        total_trajectories,
        total_env_steps: total_trajectories * h,
        final_theta: policy.theta.iter().copied().collect(),
        config_echo: config.clone(),
    })
}

fn draw_partials(mdp: &TabularMdp, policy: &PolicyParams, f: &Scalarization, config: &NpgConfig, k: usize) -> Result<OuterDraw> {
    let batch_block = LaneBlock::new(config.master_seed, k as u64, Phase::ReturnBatch);
    match config.estimator {
        EstimatorConfig::Empirical { b1, b2 } => {
            let table = policy.prob_table();
            let trajs = sample_batch_with_table(mdp, &table, config.horizon, b1, &batch_block);
            let j_hat = mean_return(mdp, &trajs);
            Ok(OuterDraw {
                partials: f.grad(j_hat.as_slice())?,
                inner_batch: b2,
                outer_trajectories: b1,
                level_q: None,
                truncated: None,
            })
        }
        EstimatorConfig::Mlmc { b_max, b, coupled_base } => {
            let level_block = LaneBlock::new(config.master_seed, k as u64, Phase::MlmcLevel);
            let p = mlmc_partials(mdp, policy, f, config.horizon, b_max, &level_block, &batch_block, coupled_base)?;
            Ok(OuterDraw {
                partials: p.partials,
                inner_batch: b,
                outer_trajectories: p.trajectories_used,
                level_q: Some(p.level_q),
                truncated: Some(p.truncated),
            })
        }
    }
}

/// Empirical-batch NPG: `B1` trajectories give `Ĵ` and its partials once per
/// outer iteration; each inner step draws `B2` fresh trajectories.
pub fn run_vanilla_npg(mdp: &TabularMdp, f: &Scalarization, config: &NpgConfig) -> Result<RunReport> {
    if !matches!(config.estimator, EstimatorConfig::Empirical { .. }) {
        return Err(Error::config("run_vanilla_npg needs an empirical estimator block"));
    }
    outer_loop(mdp, f, config, Mode::Sampled, "npg")
}

/// MLMC-NPG: partials from one MLMC draw per outer iteration, `B` fresh
/// trajectories per inner step.
///
/// MLMC trajectories share the lanes of the empirical return batch, so with
/// `B_max = 1` a run replays `run_vanilla_npg` with `B1 = 1` exactly.
pub fn run_mlmc_npg(mdp: &TabularMdp, f: &Scalarization, config: &NpgConfig) -> Result<RunReport> {
    if !matches!(config.estimator, EstimatorConfig::Mlmc { .. }) {
        return Err(Error::config("run_mlmc_npg needs an mlmc estimator block"));
    }
    outer_loop(mdp, f, config, Mode::Sampled, "mlmc_npg")
}

/// Dispatches on the estimator block.
pub fn run_npg(mdp: &TabularMdp, f: &Scalarization, config: &NpgConfig) -> Result<RunReport> {
    match config.estimator {
        EstimatorConfig::Empirical { .. } => run_vanilla_npg(mdp, f, config),
        EstimatorConfig::Mlmc { .. } => run_mlmc_npg(mdp, f, config),
    }
}

/// The outer loop driven by the oracle's exact `∇f(J)` and `F`; no sampling.
/// The estimator block only fixes batch bookkeeping and is otherwise ignored.
pub fn run_exact_npg(mdp: &TabularMdp, f: &Scalarization, config: &NpgConfig) -> Result<RunReport> {
    outer_loop(mdp, f, config, Mode::Exact, "exact_npg")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::suite;
    use crate::oracle::{exact_fisher, exact_npg_direction};

    fn config(estimator: EstimatorConfig, k: usize) -> NpgConfig {
        NpgConfig {
            outer_iters: k,
            inner_iters: 10,
            horizon: 20,
            step_alpha: 0.1,
            step_beta: 0.25,
            estimator,
            omega_init: None,
            warm_start: false,
            master_seed: 7,
            fisher_normalized: true,
            theta_init: None,
            refresh_beta: false,
            schedule: None,
        }
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut src = FixedSource { grad: DVector::zeros(3), fisher: DMatrix::identity(3, 3) * 0.7 };
        let w = solve_direction(&mut src, 25, 0.5, DVector::zeros(3), |_, _| {}).unwrap();
        assert_eq!(w, DVector::zeros(3));
    }

    #[test]
    fn identity_fisher_solves_in_one_step() {
        let g = DVector::from_vec(vec![0.3, -1.2, 2.0]);
        let mut src = FixedSource { grad: g.clone(), fisher: DMatrix::identity(3, 3) };
        let mut seen = Vec::new();
        solve_direction(&mut src, 5, 1.0, DVector::zeros(3), |n, w| seen.push((n, w.clone()))).unwrap();
        assert_eq!(seen.len(), 6);
        for (n, w) in &seen[1..] {
            assert_eq!(w, &g, "step {n}");
        }
    }

    #[test]
    fn large_beta_diverges_with_index() {
        let mut src = FixedSource { grad: DVector::from_element(2, 1.0), fisher: DMatrix::identity(2, 2) * 1e3 };
        let err = solve_direction(&mut src, 1000, 1e3, DVector::zeros(2), |_, _| {}).unwrap_err();
        assert!(matches!(err, Error::Divergence { outer: None, inner } if inner < 1000));
    }

    #[test]
    fn exact_inputs_converge_to_oracle_direction() {
        let mdp = suite::chain(0.9);
        let p = PolicyParams::from_theta(2, 2, vec![0.4, -0.3, 0.1, 0.6]).unwrap();
        let f = Scalarization::alpha_fair(2, 2.0, 0.05).unwrap();
        let spec = exact_fisher(&mdp, &p).unwrap();
        let target = exact_npg_direction(&mdp, &p, &f).unwrap();
        let grad = spec.matrix.clone() * &target;
        let mut src = FixedSource { grad, fisher: spec.matrix.clone() };
        let beta = 1.0 / spec.lambda_max;
        let n = (40.0 * spec.lambda_max / spec.mu_range).ceil() as usize;
        let w = solve_direction(&mut src, n, beta, DVector::zeros(4), |_, _| {}).unwrap();
        assert!((w - target).norm() < 1e-6);
    }

    #[test]
    fn empty_run_keeps_theta() {
        let mdp = suite::symmetric_bandit(0.9);
        let f = Scalarization::alpha_fair(2, 2.0, 0.05).unwrap();
        let mut cfg = config(EstimatorConfig::Empirical { b1: 4, b2: 4 }, 0);
        cfg.theta_init = Some(vec![0.2, -0.1]);
        let r = run_vanilla_npg(&mdp, &f, &cfg).unwrap();
        assert!(r.per_outer_iteration.is_empty());
        assert_eq!(r.final_theta, vec![0.2, -0.1]);
        assert_eq!(r.total_trajectories, 0);
    }

    #[test]
    fn accounting_identity_holds() {
        let mdp = suite::chain(0.9);
        let f = Scalarization::alpha_fair(2, 2.0, 0.05).unwrap();
        let r = run_vanilla_npg(&mdp, &f, &config(EstimatorConfig::Empirical { b1: 5, b2: 3 }, 4)).unwrap();
        assert!(r.per_outer_iteration.iter().all(|x| x.trajectories_this_iter == 5 + 10 * 3));
        assert_eq!(r.total_env_steps, r.total_trajectories * 20);
        let m = run_mlmc_npg(&mdp, &f, &config(EstimatorConfig::Mlmc { b_max: 8, b: 2, coupled_base: true }, 6)).unwrap();
        let mut total = 0;
        for rec in &m.per_outer_iteration {
            let q = rec.level_q.unwrap();
            let b_k = if q <= 3 { 1 << q } else { 1 };
            assert_eq!(rec.trajectories_this_iter, b_k + 20);
            assert_eq!(rec.truncated, Some(q > 3));
            total += rec.trajectories_this_iter;
        }
        assert_eq!(total, m.total_trajectories);
    }

    #[test]
    fn mlmc_with_unit_cap_replays_vanilla() {
        let mdp = suite::chain(0.9);
        let f = Scalarization::kinked_quadratic(vec![5.0, 5.0], 1.0).unwrap();
        let v = run_vanilla_npg(&mdp, &f, &config(EstimatorConfig::Empirical { b1: 1, b2: 2 }, 5)).unwrap();
        let m = run_mlmc_npg(&mdp, &f, &config(EstimatorConfig::Mlmc { b_max: 1, b: 2, coupled_base: true }, 5)).unwrap();
        assert_eq!(v.final_theta, m.final_theta);
        for (a, b) in v.per_outer_iteration.iter().zip(&m.per_outer_iteration) {
            assert_eq!(a.exact_f, b.exact_f);
            assert_eq!(a.trajectories_this_iter, b.trajectories_this_iter);
        }
    }

    #[test]
    fn linear_objective_drives_policy_to_best_arm() {
        let mdp = suite::symmetric_bandit(0.9);
        let f = Scalarization::weighted_sum(vec![1.0, 0.0]).unwrap();
        let mut cfg = config(EstimatorConfig::Empirical { b1: 8, b2: 8 }, 60);
        cfg.horizon = 40;
        let r = run_vanilla_npg(&mdp, &f, &cfg).unwrap();
        let p = PolicyParams::from_theta(1, 2, r.final_theta.clone()).unwrap().action_probs(0);
        assert!(p[0] > 0.95, "π(a0) = {}", p[0]);
        assert!(r.final_exact_f() > r.initial_exact_f);
        assert!(r.final_exact_f() <= 10.0 + 1e-12);
    }

    #[test]
    fn exact_outer_loop_is_monotone() {
        for mdp in [suite::symmetric_bandit(0.9), suite::asymmetric_bandit(0.9)] {
            let f = Scalarization::alpha_fair(2, 2.0, 0.05).unwrap();
            let mut cfg = config(EstimatorConfig::Empirical { b1: 1, b2: 1 }, 50);
            cfg.theta_init = Some(vec![1.5, -0.5]);
            cfg.inner_iters = 200;
            cfg.step_beta = 1.0;
            let r = run_exact_npg(&mdp, &f, &cfg).unwrap();
            let mut prev = r.initial_exact_f;
            for rec in &r.per_outer_iteration {
                assert!(rec.exact_f >= prev - 1e-9, "k={} {} < {}", rec.k, rec.exact_f, prev);
                prev = rec.exact_f;
            }
        }
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = config(EstimatorConfig::Mlmc { b_max: 64, b: 4, coupled_base: true }, 3);
        let s = serde_json::to_string(&cfg).unwrap();
        let back: NpgConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, cfg);
        let mut bad = cfg.clone();
        bad.theta_init = Some(vec![0.0; 3]);
        assert!(bad.validate(2).is_err());
        let mut bad = cfg.clone();
        bad.step_alpha = 0.0;
        assert!(bad.validate(2).is_err());
    }
}
