use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fit::{fit_loglog_slope, SlopeFit};
use crate::error::{Error, Result};
use crate::estimators::{mean_return, mlmc_partials, reinforce_grad, sample_batch_with_table};
use crate::mdp::{LaneBlock, Phase, TabularMdp};
use crate::oracle::{
    enumerate_trajectories, exact_scalarized_gradient, grad_moments, mlmc_partial_moments, plugin_partial_moments,
    return_outcomes, truncated_returns_and_jacobian, GradientMode, ReturnOutcome,
};
use crate::policy::PolicyParams;
use crate::scalarization::Scalarization;

pub const MIN_MONTECARLO_REPLICATIONS: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimatorKind {
    /// Plug-in partials from a batch of `B` trajectories.
    Empirical,
    /// MLMC partials truncated at `B_max = B`.
    Mlmc { coupled_base: bool },
}

impl EstimatorKind {
    pub fn label(&self) -> &'static str {
        match self {
            EstimatorKind::Empirical => "empirical",
            EstimatorKind::Mlmc { .. } => "mlmc",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CampaignMode {
    Enumerate,
    Montecarlo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasCampaign {
    pub horizon: usize,
    pub estimator: EstimatorKind,
    /// Batch sizes, or `B_max` values for MLMC.
    pub b_list: Vec<usize>,
    pub replications: usize,
    pub mode: CampaignMode,
    pub seed: u64,
    pub budget: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasRow {
    pub b: usize,
    /// `‖E[g] − ∇f(J_H)‖`.
    pub bias_norm: f64,
    /// `E‖g − ∇f(J_H)‖²`.
    pub variance: f64,
    /// `E‖Ĵ_{H,B} − J_H‖²`; empirical estimator only.
    pub mse_j: Option<f64>,
    /// Zero for enumerated rows.
    pub replications: usize,
    /// Three standard errors of the bias estimate; zero for enumerated rows.
    pub ci_halfwidth: f64,
    /// `‖∇f(J) − ∇f(J_H)‖`, the part of the total error due to truncation.
    pub horizon_bias: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasVarianceReport {
    pub rows: Vec<BiasRow>,
    pub fitted_slope_bias: Option<SlopeFit>,
    pub fitted_slope_variance: Option<SlopeFit>,
    /// Rows left out of the bias fit because their bias vanishes.
    pub zero_bias_rows: usize,
    pub estimator_kind: String,
    pub scalarization_kind: String,
    pub mode: CampaignMode,
    pub horizon: usize,
}

impl BiasVarianceReport {
    pub const CSV_HEADER: [&'static str; 7] =
        ["b", "bias_norm", "variance", "mse_j", "replications", "ci_halfwidth", "horizon_bias"];

    pub fn csv_rows(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                vec![
                    r.b.to_string(),
                    r.bias_norm.to_string(),
                    r.variance.to_string(),
                    r.mse_j.map(|v| v.to_string()).unwrap_or_default(),
                    r.replications.to_string(),
                    r.ci_halfwidth.to_string(),
                    r.horizon_bias.to_string(),
                ]
            })
            .collect()
    }
}

/// Bias and variance of the scalarized gradient estimate `g(τ, partials)`
/// against the truncated oracle gradient, for every `B` in the campaign.
pub fn measure_bias_variance(
    mdp: &TabularMdp,
    policy: &PolicyParams,
    f: &Scalarization,
    campaign: &BiasCampaign,
) -> Result<BiasVarianceReport> {
    mdp.check_policy(policy)?;
    if campaign.horizon == 0 {
        return Err(Error::config("horizon must be at least 1"));
    }
    let mut b_list = campaign.b_list.clone();
    b_list.sort_unstable();
    b_list.dedup();
    if b_list.is_empty() || b_list[0] == 0 {
        return Err(Error::config("b_list must contain positive batch sizes"));
    }
    if campaign.mode == CampaignMode::Montecarlo && campaign.replications < MIN_MONTECARLO_REPLICATIONS {
        return Err(Error::config(format!(
            "montecarlo mode needs at least {MIN_MONTECARLO_REPLICATIONS} replications, got {}",
            campaign.replications
        )));
    }
    let (j_h, jac_h) = truncated_returns_and_jacobian(mdp, policy, campaign.horizon)?;
    let reference = jac_h.transpose() * f.grad(j_h.as_slice())?;
    let horizon_bias = (exact_scalarized_gradient(mdp, policy, f, GradientMode::Infinite)? - &reference).norm();

    let rows = match campaign.mode {
        CampaignMode::Enumerate => enumerate_rows(mdp, policy, f, campaign, &b_list, &j_h, &reference, horizon_bias)?,
        CampaignMode::Montecarlo => montecarlo_rows(mdp, policy, f, campaign, &b_list, &j_h, &reference, horizon_bias)?,
    };

    let zero_tol = 1e-12 * reference.norm().max(1.0);
    let bias_pts: Vec<(f64, f64)> =
        rows.iter().filter(|r| r.bias_norm > zero_tol).map(|r| (r.b as f64, r.bias_norm)).collect();
    let zero_bias_rows = rows.len() - bias_pts.len();
    let var_pts: Vec<(f64, f64)> = rows.iter().filter(|r| r.variance > 0.0).map(|r| (r.b as f64, r.variance)).collect();
    let fit = |pts: &[(f64, f64)]| if pts.len() >= 3 { fit_loglog_slope(pts).ok() } else { None };
    Ok(BiasVarianceReport {
        fitted_slope_bias: fit(&bias_pts),
        fitted_slope_variance: fit(&var_pts),
        zero_bias_rows,
        rows,
        estimator_kind: campaign.estimator.label().to_string(),
        scalarization_kind: f.kind().to_string(),
        mode: campaign.mode,
        horizon: campaign.horizon,
    })
}

#[allow(clippy::too_many_arguments)]
fn enumerate_rows(
    mdp: &TabularMdp,
    policy: &PolicyParams,
    f: &Scalarization,
    campaign: &BiasCampaign,
    b_list: &[usize],
    j_h: &DVector<f64>,
    reference: &DVector<f64>,
    horizon_bias: f64,
) -> Result<Vec<BiasRow>> {
    let trajs = enumerate_trajectories(mdp, policy, campaign.horizon, campaign.budget)?;
    let outcomes = return_outcomes(mdp, &trajs);
    b_list
        .iter()
        .map(|&b| {
            let (m1, m2) = match campaign.estimator {
                EstimatorKind::Empirical => plugin_partial_moments(f, &outcomes, b, campaign.budget)?,
                EstimatorKind::Mlmc { coupled_base } => {
                    mlmc_partial_moments(f, &outcomes, b, coupled_base, campaign.budget)?
                }
            };
            let (mean_g, second_g) = grad_moments(mdp, policy, &trajs, &m1, &m2)?;
            let mse_j = match campaign.estimator {
                EstimatorKind::Empirical => Some(plugin_return_mse(&outcomes, j_h, b)),
                EstimatorKind::Mlmc { .. } => None,
            };
            Ok(BiasRow {
                b,
                bias_norm: (&mean_g - reference).norm(),
                variance: (second_g - 2.0 * mean_g.dot(reference) + reference.norm_squared()).max(0.0),
                mse_j,
                replications: 0,
                ci_halfwidth: 0.0,
                horizon_bias,
            })
        })
        .collect()
}

/// `E‖Ĵ_{H,B} − J_H‖² = tr Cov(R) / B` for i.i.d. returns `R`.
fn plugin_return_mse(outcomes: &[ReturnOutcome], j_h: &DVector<f64>, b: usize) -> f64 {
    outcomes.iter().map(|o| o.prob * (&o.ret - j_h).norm_squared()).sum::<f64>() / b as f64
}

struct Replication {
    g: DVector<f64>,
    j_err: Option<f64>,
}

#[allow(clippy::too_many_arguments)]
fn montecarlo_rows(
    mdp: &TabularMdp,
    policy: &PolicyParams,
    f: &Scalarization,
    campaign: &BiasCampaign,
    b_list: &[usize],
    j_h: &DVector<f64>,
    reference: &DVector<f64>,
    horizon_bias: f64,
) -> Result<Vec<BiasRow>> {
    let table = policy.prob_table();
    let h = campaign.horizon;
    let d = policy.dim();
    let r_n = campaign.replications;
    let mut rows = Vec::with_capacity(b_list.len());
    for (bi, &b) in b_list.iter().enumerate() {
        let sub = 3 * bi as u32;
        let reps: Vec<Replication> = (0..r_n as u64)
            .into_par_iter()
            .map(|r| {
                let block = |k: u32| LaneBlock::new(campaign.seed, r, Phase::Campaign(sub + k));
                let (partials, j_err) = match campaign.estimator {
                    EstimatorKind::Empirical => {
                        let trajs = sample_batch_with_table(mdp, &table, h, b, &block(0));
                        let j_hat = mean_return(mdp, &trajs);
                        (f.grad(j_hat.as_slice())?, Some((j_hat - j_h).norm_squared()))
                    }
                    EstimatorKind::Mlmc { coupled_base } => {
                        let p = mlmc_partials(mdp, policy, f, h, b, &block(1), &block(0), coupled_base)?;
                        (p.partials, None)
                    }
                };
                let tau = sample_batch_with_table(mdp, &table, h, 1, &block(2)).remove(0);
                let g = reinforce_grad(&tau, &partials, policy, mdp)?.g;
                Ok(Replication { g, j_err })
            })
            .collect::<Result<_>>()?;
        let n = r_n as f64;
        let mut mean = DVector::zeros(d);
        for rep in &reps {
            mean += &rep.g;
        }
        mean /= n;
        let mut sq_dev = 0.0;
        let mut var_sum = DVector::<f64>::zeros(d);
        for rep in &reps {
            sq_dev += (&rep.g - reference).norm_squared();
            let dev = &rep.g - &mean;
            var_sum += dev.component_mul(&dev);
        }
        let ci_halfwidth = 3.0 * (var_sum.sum() / (n - 1.0) / n).sqrt();
        let mse_j = match campaign.estimator {
            EstimatorKind::Empirical => Some(reps.iter().filter_map(|r| r.j_err).sum::<f64>() / n),
            EstimatorKind::Mlmc { .. } => None,
        };
        rows.push(BiasRow {
            b,
            bias_norm: (&mean - reference).norm(),
            variance: sq_dev / n,
            mse_j,
            replications: r_n,
            ci_halfwidth,
            horizon_bias,
        });
    }
    Ok(rows)
}
