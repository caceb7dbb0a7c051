use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{fisher_sample, sample_batch_with_table};
use crate::mdp::{LaneBlock, Phase, TabularMdp};
use crate::oracle::{exact_values, fisher_from_occupancy};
use crate::policy::{PolicyParams, SOFTMAX_SCORE_BOUND};
use crate::scalarization::{PolicyClassConstants, Scalarization};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerLoopCampaign {
    pub horizon: usize,
    /// Trajectories per Fisher estimate.
    pub batch: usize,
    pub replications: usize,
    pub seed: u64,
    pub fisher_normalized: bool,
}

/// Oracle-error quantities of the inner recursion, measured against exact values.
/// Matrix norms are Frobenius.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerLoopDiagnostics {
    /// `E‖F̂ − E F̂‖²` for a batch of `batch` trajectories.
    pub sigma_f_sq: f64,
    /// Standard error of `sigma_f_sq`.
    pub sigma_f_sq_se: f64,
    /// `‖mean F̂ − F‖`.
    pub delta_f: f64,
    /// Three standard errors of the Monte Carlo mean, in the same norm.
    pub delta_f_ci: f64,
    /// `G_1² γ^H`, the truncation part of `δ_F` (divided by `1 − γ` when unnormalized).
    pub truncation_floor: f64,
    /// Largest eigenvalue of the exact Fisher matrix.
    pub lambda_f: f64,
    pub lambda_f_bound: f64,
    /// `‖∇f(J)‖` from the oracle.
    pub lambda_g: f64,
    /// `C M G_1 / (1 − γ)²`.
    pub lambda_g_bound: f64,
    /// `‖ω_0 − ω*‖` with `ω_0 = 0`.
    pub r0: f64,
    /// Smallest retained Fisher eigenvalue.
    pub mu: f64,
    pub batch: usize,
    pub horizon: usize,
    pub replications: usize,
}

pub fn measure_inner_loop(
    mdp: &TabularMdp,
    policy: &PolicyParams,
    f: &Scalarization,
    campaign: &InnerLoopCampaign,
) -> Result<InnerLoopDiagnostics> {
    if campaign.horizon == 0 || campaign.batch == 0 || campaign.replications < 2 {
        return Err(Error::config("inner-loop campaign needs horizon, batch >= 1 and replications >= 2"));
    }
    let ev = exact_values(mdp, policy)?;
    let spectrum = fisher_from_occupancy(policy, &ev.occupancy);
    let grad = ev.jacobian.transpose() * f.grad(ev.j.as_slice())?;
    let omega_star = spectrum.pinv_apply(&grad);
    let gamma = mdp.discount;
    let scale = if campaign.fisher_normalized { 1.0 } else { 1.0 / (1.0 - gamma) };
    let target = &spectrum.matrix * scale;

    let table = policy.prob_table();
    let d = policy.dim();
    let samples: Vec<DMatrix<f64>> = (0..campaign.replications as u64)
        .into_par_iter()
        .map(|r| {
            let block = LaneBlock::new(campaign.seed, r, Phase::Campaign(0));
            let trajs = sample_batch_with_table(mdp, &table, campaign.horizon, campaign.batch, &block);
            let mut acc = DMatrix::zeros(d, d);
            for t in &trajs {
                acc += fisher_sample(t, policy, gamma, campaign.fisher_normalized).f_hat;
            }
            acc / campaign.batch as f64
        })
        .collect();
    let n = campaign.replications as f64;
    let mut mean = DMatrix::zeros(d, d);
    for s in &samples {
        mean += s;
    }
    mean /= n;
    let dev_sq: Vec<f64> = samples.iter().map(|s| (s - &mean).norm_squared()).collect();
    let sigma_f_sq = dev_sq.iter().sum::<f64>() / (n - 1.0);
    let dev_mean = dev_sq.iter().sum::<f64>() / n;
    let dev_var = dev_sq.iter().map(|x| (x - dev_mean).powi(2)).sum::<f64>() / (n - 1.0);

    let constants = f.constants(gamma, PolicyClassConstants::softmax_tabular(spectrum.mu_range))?;
    let g1 = SOFTMAX_SCORE_BOUND;
    Ok(InnerLoopDiagnostics {
        sigma_f_sq,
        sigma_f_sq_se: (dev_var / n).sqrt(),
        delta_f: (&mean - target).norm(),
        delta_f_ci: 3.0 * (sigma_f_sq / n).sqrt(),
        truncation_floor: g1 * g1 * gamma.powi(campaign.horizon as i32) * scale,
        lambda_f: spectrum.lambda_max,
        lambda_f_bound: g1 * g1,
        lambda_g: grad.norm(),
        lambda_g_bound: constants.c * mdp.n_objectives as f64 * g1 / (1.0 - gamma).powi(2),
        r0: omega_star.norm(),
        mu: spectrum.mu_range,
        batch: campaign.batch,
        horizon: campaign.horizon,
        replications: campaign.replications,
    })
}
