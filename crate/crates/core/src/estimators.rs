//! Stochastic estimators built from sampled trajectories.
//!
//! * empirical return vectors `Ĵ_{H,B}`;
//! * MLMC-combined scalarization partials;
//! * the REINFORCE-style scalarized gradient sample;
//! * single-trajectory Fisher samples.
//!
//! Batch reductions run over per-trajectory results collected in lane
//! order, so results do not depend on the rayon pool size.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{LaneBlock, TabularMdp, Trajectory};
use crate::policy::PolicyParams;
use crate::scalarization::Scalarization;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReturnEstimate {
    pub j_hat: DVector<f64>,
    pub batch_size: usize,
    pub horizon: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlmcPartials {
    pub partials: DVector<f64>,
    pub level_q: u32,
    /// `2^Q > B_max`: only the single-trajectory plug-in term was used.
    pub truncated: bool,
    pub trajectories_used: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradSample {
    pub g: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FisherSample {
    pub f_hat: DMatrix<f64>,
}

/// Draws `count` trajectories on lanes `0..count` of `block`.
pub fn sample_batch(
    mdp: &TabularMdp,
    policy: &PolicyParams,
    horizon: usize,
    count: usize,
    block: &LaneBlock,
) -> Result<Vec<Trajectory>> {
    mdp.check_policy(policy)?;
    if horizon == 0 {
        return Err(Error::config("horizon must be at least 1"));
    }
    let table = policy.prob_table();
    Ok(sample_batch_with_table(mdp, &table, horizon, count, block))
}

pub(crate) fn sample_batch_with_table(
    mdp: &TabularMdp,
    table: &[f64],
    horizon: usize,
    count: usize,
    block: &LaneBlock,
) -> Vec<Trajectory> {
    (0..count as u64)
        .into_par_iter()
        .map(|i| mdp.sample_with_table(table, horizon, &block.stream(i)))
        .collect()
}

/// Componentwise mean of truncated returns.
pub fn mean_return(mdp: &TabularMdp, trajectories: &[Trajectory]) -> DVector<f64> {
    let mut acc = DVector::zeros(mdp.n_objectives);
    for t in trajectories {
        acc += mdp.truncated_return(t);
    }
    acc / trajectories.len() as f64
}

/// `Ĵ_{H,B}` from `B` fresh trajectories on `block`.
pub fn empirical_return(
    mdp: &TabularMdp,
    policy: &PolicyParams,
    horizon: usize,
    batch: usize,
    block: &LaneBlock,
) -> Result<ReturnEstimate> {
    if batch == 0 {
        return Err(Error::config("batch size must be at least 1"));
    }
    let trajs = sample_batch(mdp, policy, horizon, batch, block)?;
    Ok(ReturnEstimate { j_hat: mean_return(mdp, &trajs), batch_size: batch, horizon })
}

/// Whether level `q` falls outside `2^q ≤ B_max`.
pub fn level_truncated(level_q: u32, b_max: usize) -> bool {
    level_q >= usize::BITS - 1 || (1usize << level_q) > b_max
}

/// `⌊log₂ B_max⌋`.
pub fn top_level(b_max: usize) -> u32 {
    assert!(b_max >= 1, "B_max must be at least 1");
    usize::BITS - 1 - b_max.leading_zeros()
}

/// `2^⌊log₂ B_max⌋`, the batch size whose plug-in expectation the MLMC estimator matches.
pub fn effective_b_max(b_max: usize) -> usize {
    1usize << top_level(b_max)
}

/// `E[B_k] = Σ_{q ≤ J} 2^{-q} 2^q + Pr(Q > J) = J + 2^{-J}` with `J = ⌊log₂ B_max⌋`.
pub fn expected_mlmc_cost(b_max: usize) -> f64 {
    let j = top_level(b_max);
    j as f64 + 0.5f64.powi(j as i32)
}

/// `Var[B_k]` under the same level distribution.
pub fn mlmc_cost_variance(b_max: usize) -> f64 {
    let j = top_level(b_max) as i32;
    // E[B_k²] = Σ_{q ≤ J} 2^q + 2^{-J}
    let second = 2f64.powi(j + 1) - 2.0 + 0.5f64.powi(j);
    second - expected_mlmc_cost(b_max).powi(2)
}

/// Number of trajectories an MLMC draw at level `q` consumes.
pub fn mlmc_trajectory_count(level_q: u32, b_max: usize, coupled_base: bool) -> usize {
    if level_truncated(level_q, b_max) {
        1
    } else if coupled_base {
        1 << level_q
    } else {
        (1 << level_q) + 1
    }
}

/// Combines per-trajectory returns into MLMC partials:
/// `∂f(Ĵ_1) + 1{2^Q ≤ B_max} 2^Q (∂f(Ĵ_{2^Q}) − ∂f(Ĵ_{2^{Q−1}}))`.
///
/// `returns[..2^Q]` is the level batch and `Ĵ_{2^{Q−1}}` uses its first half.
/// `Ĵ_1` is `returns[0]` when `coupled_base`, otherwise the extra `returns[2^Q]`.
/// A truncated draw reads only `returns[0]`.
pub fn mlmc_combine(
    f: &Scalarization,
    level_q: u32,
    b_max: usize,
    coupled_base: bool,
    returns: &[DVector<f64>],
) -> Result<DVector<f64>> {
    let need = mlmc_trajectory_count(level_q, b_max, coupled_base);
    if returns.len() < need {
        return Err(Error::config(format!("mlmc level {level_q} needs {need} returns, got {}", returns.len())));
    }
    if level_truncated(level_q, b_max) {
        return f.grad(returns[0].as_slice());
    }
    let full = 1usize << level_q;
    let half = full / 2;
    let mut sum_half = DVector::zeros(f.n_objectives);
    for r in &returns[..half] {
        sum_half += r;
    }
    let mut sum_full = sum_half.clone();
    for r in &returns[half..full] {
        sum_full += r;
    }
    let base = if coupled_base { &returns[0] } else { &returns[full] };
    let g_base = f.grad(base.as_slice())?;
    let g_full = f.grad((sum_full / full as f64).as_slice())?;
    let g_half = f.grad((sum_half / half as f64).as_slice())?;
    Ok(g_base + (g_full - g_half) * full as f64)
}

/// Draws `Q ~ Geom(1/2)` from lane 0 of `level_block`, samples the level
/// batch on `batch_block` and returns the MLMC partials.
#[allow(clippy::too_many_arguments)]
pub fn mlmc_partials(
    mdp: &TabularMdp,
    policy: &PolicyParams,
    f: &Scalarization,
    horizon: usize,
    b_max: usize,
    level_block: &LaneBlock,
    batch_block: &LaneBlock,
    coupled_base: bool,
) -> Result<MlmcPartials> {
    if b_max == 0 {
        return Err(Error::config("B_max must be at least 1"));
    }
    let level_q = level_block.stream(0).rng().geometric_half();
    let count = mlmc_trajectory_count(level_q, b_max, coupled_base);
    let trajs = sample_batch(mdp, policy, horizon, count, batch_block)?;
    let returns: Vec<DVector<f64>> = trajs.iter().map(|t| mdp.truncated_return(t)).collect();
    let partials = mlmc_combine(f, level_q, b_max, coupled_base, &returns)?;
    Ok(MlmcPartials { partials, level_q, truncated: level_truncated(level_q, b_max), trajectories_used: count })
}

/// Per-step weights `Σ_m ∂_m f · Σ_{h ≥ t} γ^h r_m(s_h, a_h)`, via one reverse pass.
fn reward_to_go_weights(traj: &Trajectory, partials: &[f64], mdp: &TabularMdp) -> Vec<f64> {
    let h_len = traj.steps.len();
    let mut weights = vec![0.0; h_len];
    let mut suffix = vec![0.0; mdp.n_objectives];
    let mut powers = Vec::with_capacity(h_len);
    let mut disc = 1.0;
    for _ in 0..h_len {
        powers.push(disc);
        disc *= mdp.discount;
    }
    for t in (0..h_len).rev() {
        let disc = powers[t];
        let (s, a) = traj.steps[t];
        let mut w = 0.0;
        for (m, acc) in suffix.iter_mut().enumerate() {
            *acc += disc * mdp.reward(m, s, a);
            w += partials[m] * *acc;
        }
        weights[t] = w;
    }
    weights
}

/// `g = Σ_t ∇log π(a_t|s_t) · Σ_m ∂_m f · Σ_{h=t}^{H−1} γ^h r_m(s_h, a_h)`.
///
/// The inner weight is `γ^h`, not `γ^{h−t}`.
pub fn reinforce_grad(
    traj: &Trajectory,
    partials: &DVector<f64>,
    policy: &PolicyParams,
    mdp: &TabularMdp,
) -> Result<GradSample> {
    mdp.check_policy(policy)?;
    if partials.len() != mdp.n_objectives {
        return Err(Error::config("partials length must equal the number of objectives"));
    }
    if partials.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("partials are not finite".into()));
    }
    let table = policy.prob_table();
    let mut g = DVector::zeros(policy.dim());
    accumulate_grad(traj, partials.as_slice(), &table, mdp, 1.0, g.as_mut_slice());
    Ok(GradSample { g })
}

fn accumulate_grad(traj: &Trajectory, partials: &[f64], table: &[f64], mdp: &TabularMdp, scale: f64, out: &mut [f64]) {
    let n_a = mdp.n_actions;
    let weights = reward_to_go_weights(traj, partials, mdp);
    for (&(s, a), w) in traj.steps.iter().zip(weights) {
        let probs = &table[s * n_a..(s + 1) * n_a];
        let block = &mut out[s * n_a..(s + 1) * n_a];
        for (b, (o, p)) in block.iter_mut().zip(probs).enumerate() {
            let psi = if b == a { 1.0 - p } else { -p };
            *o += scale * w * psi;
        }
    }
}

/// `Σ_t γ^t ψ_t ψ_tᵀ`, times `(1 − γ)` when `normalize` is set.
pub fn fisher_sample(traj: &Trajectory, policy: &PolicyParams, gamma: f64, normalize: bool) -> FisherSample {
    let table = policy.prob_table();
    let d = policy.dim();
    let mut f_hat = DMatrix::zeros(d, d);
    let scale = if normalize { 1.0 - gamma } else { 1.0 };
    accumulate_fisher(traj, &table, policy.n_actions, gamma, scale, &mut f_hat);
    FisherSample { f_hat }
}

fn accumulate_fisher(traj: &Trajectory, table: &[f64], n_a: usize, gamma: f64, scale: f64, out: &mut DMatrix<f64>) {
    let mut psi = vec![0.0; n_a];
    let mut disc = scale;
    for &(s, a) in &traj.steps {
        PolicyParams::score_block(&table[s * n_a..(s + 1) * n_a], a, &mut psi);
        let off = s * n_a;
        for i in 0..n_a {
            for j in 0..n_a {
                out[(off + i, off + j)] += disc * psi[i] * psi[j];
            }
        }
        disc *= gamma;
    }
}

/// Batch means of the gradient and Fisher samples over `trajectories`.
///
/// Returns `(ĝ, F̂)`; both are built from the same trajectories.
pub fn batch_grad_fisher(
    mdp: &TabularMdp,
    policy: &PolicyParams,
    partials: &DVector<f64>,
    trajectories: &[Trajectory],
    normalize_fisher: bool,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    mdp.check_policy(policy)?;
    if trajectories.is_empty() {
        return Err(Error::config("empty trajectory batch"));
    }
    let table = policy.prob_table();
    let d = policy.dim();
    let n_a = mdp.n_actions;
    let gamma = mdp.discount;
    let scale = if normalize_fisher { 1.0 - gamma } else { 1.0 };
    let per_traj: Vec<(DVector<f64>, DMatrix<f64>)> = trajectories
        .par_iter()
        .map(|t| {
            let mut g = DVector::zeros(d);
            accumulate_grad(t, partials.as_slice(), &table, mdp, 1.0, g.as_mut_slice());
            let mut f = DMatrix::zeros(d, d);
            accumulate_fisher(t, &table, n_a, gamma, scale, &mut f);
            (g, f)
        })
        .collect();
    let mut g_sum = DVector::zeros(d);
    let mut f_sum = DMatrix::zeros(d, d);
    for (g, f) in &per_traj {
        g_sum += g;
        f_sum += f;
    }
    let b = trajectories.len() as f64;
    Ok((g_sum / b, f_sum / b))
}

/// Upper bound `max_m |∂_m f| · M · G_1 / (1 − γ)²` on `‖g‖`.
pub fn grad_sample_bound(partials: &DVector<f64>, g1: f64, gamma: f64) -> f64 {
    partials.amax() * partials.len() as f64 * g1 / (1.0 - gamma).powi(2)
}
