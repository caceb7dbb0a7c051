//! Brute-force expectations over every trajectory and every batch.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{level_truncated, mlmc_combine, reinforce_grad};
use crate::mdp::{TabularMdp, Trajectory};
use crate::policy::PolicyParams;
use crate::scalarization::Scalarization;

pub const DEFAULT_ENUMERATION_BUDGET: f64 = 1e6;

/// Largest `B` for which batches are enumerated as ordered tuples.
const ORDERED_MAX_BATCH: usize = 4;

/// A distinct truncated-return vector and its total probability.
#[derive(Clone, Debug, PartialEq)]
pub struct ReturnOutcome {
    pub ret: DVector<f64>,
    pub prob: f64,
}

/// Prefix, current state, probability of prefix and current state.
type Frame = (Vec<(usize, usize)>, usize, f64);

/// Every positive-probability length-`H` trajectory with its probability.
pub fn enumerate_trajectories(
    mdp: &TabularMdp,
    policy: &PolicyParams,
    horizon: usize,
    budget: f64,
) -> Result<Vec<(Trajectory, f64)>> {
    mdp.check_policy(policy)?;
    if horizon == 0 {
        return Err(Error::config("horizon must be at least 1"));
    }
    let worst = ((mdp.n_states * mdp.n_actions) as f64).powi(horizon as i32);
    let table = policy.prob_table();
    let mut out = Vec::new();
    let mut stack: Vec<Frame> = mdp
        .initial_dist
        .iter()
        .enumerate()
        .rev()
        .filter(|(_, &p)| p > 0.0)
        .map(|(s, &p)| (Vec::with_capacity(horizon), s, p))
        .collect();
    while let Some((prefix, s, prob)) = stack.pop() {
        for a in (0..mdp.n_actions).rev() {
            let pa = prob * table[s * mdp.n_actions + a];
            if pa == 0.0 {
                continue;
            }
            let mut steps = prefix.clone();
            steps.push((s, a));
            if steps.len() == horizon {
                if out.len() as f64 >= budget {
                    return Err(Error::Budget { required: worst, budget });
                }
                out.push((Trajectory { steps }, pa));
                continue;
            }
            for (sp, &p) in mdp.transition_row(s, a).iter().enumerate().rev() {
                if p > 0.0 {
                    stack.push((steps.clone(), sp, pa * p));
                }
            }
        }
    }
    Ok(out)
}

/// Groups enumerated trajectories by their truncated-return vector.
pub fn return_outcomes(mdp: &TabularMdp, trajectories: &[(Trajectory, f64)]) -> Vec<ReturnOutcome> {
    let mut out: Vec<ReturnOutcome> = Vec::new();
    for (t, p) in trajectories {
        let r = mdp.truncated_return(t);
        match out.iter_mut().find(|o| o.ret == r) {
            Some(o) => o.prob += p,
            None => out.push(ReturnOutcome { ret: r, prob: *p }),
        }
    }
    out
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Number of terms needed to enumerate all batches of size `b` over `k` outcomes.
fn batch_terms(k: usize, b: usize) -> f64 {
    if b <= ORDERED_MAX_BATCH {
        (k as f64).powi(b as i32)
    } else {
        binomial(b + k - 1, k - 1)
    }
}

/// `E[φ(Ĵ_{H,B})]` where `Ĵ` is the mean of `B` i.i.d. draws from `outcomes`.
///
/// Small batches are enumerated as ordered tuples, larger ones as
/// multisets weighted by multinomial probabilities.
pub(crate) fn expect_over_batch<F>(outcomes: &[ReturnOutcome], batch: usize, budget: f64, mut phi: F) -> Result<DVector<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    if batch == 0 {
        return Err(Error::config("batch size must be at least 1"));
    }
    let k = outcomes.len();
    let required = batch_terms(k, batch);
    if required > budget {
        return Err(Error::Budget { required, budget });
    }
    let dim = outcomes[0].ret.len();
    if batch <= ORDERED_MAX_BATCH {
        ordered_expectation(outcomes, batch, |rs, w, acc: &mut Option<DVector<f64>>| {
            let mut mean = DVector::zeros(dim);
            for r in rs {
                mean += *r;
            }
            mean /= batch as f64;
            let v = phi(&mean)? * w;
            match acc {
                Some(a) => *a += v,
                None => *acc = Some(v),
            }
            Ok(())
        })
    } else {
        let ln_fact: Vec<f64> = std::iter::once(0.0)
            .chain((1..=batch).scan(0.0, |acc, i| {
                *acc += (i as f64).ln();
                Some(*acc)
            }))
            .collect();
        let mut counts = vec![0usize; k];
        let mut acc: Option<DVector<f64>> = None;
        multiset_walk(outcomes, 0, batch, &mut counts, &mut |counts| {
            let mut ln_w = ln_fact[batch];
            let mut mean = DVector::zeros(dim);
            for (c, o) in counts.iter().zip(outcomes) {
                if *c > 0 {
                    ln_w += *c as f64 * o.prob.ln() - ln_fact[*c];
                    mean += &o.ret * (*c as f64);
                }
            }
            mean /= batch as f64;
            let v = phi(&mean)? * ln_w.exp();
            match &mut acc {
                Some(a) => *a += v,
                None => acc = Some(v),
            }
            Ok(())
        })?;
        Ok(acc.expect("at least one batch"))
    }
}

fn multiset_walk<F>(
    outcomes: &[ReturnOutcome],
    idx: usize,
    remaining: usize,
    counts: &mut Vec<usize>,
    visit: &mut F,
) -> Result<()>
where
    F: FnMut(&[usize]) -> Result<()>,
{
    if idx + 1 == outcomes.len() {
        counts[idx] = remaining;
        visit(counts)?;
        counts[idx] = 0;
        return Ok(());
    }
    for c in 0..=remaining {
        counts[idx] = c;
        multiset_walk(outcomes, idx + 1, remaining - c, counts, visit)?;
    }
    counts[idx] = 0;
    Ok(())
}

/// Sums `visit(returns, weight)` over every ordered `n`-tuple of outcomes.
fn ordered_expectation<F>(outcomes: &[ReturnOutcome], n: usize, mut visit: F) -> Result<DVector<f64>>
where
    F: FnMut(&[&DVector<f64>], f64, &mut Option<DVector<f64>>) -> Result<()>,
{
    let k = outcomes.len();
    let mut idx = vec![0usize; n];
    let mut acc = None;
    let mut refs: Vec<&DVector<f64>> = vec![&outcomes[0].ret; n];
    loop {
        let mut w = 1.0;
        for (slot, &i) in idx.iter().enumerate() {
            w *= outcomes[i].prob;
            refs[slot] = &outcomes[i].ret;
        }
        visit(&refs, w, &mut acc)?;
        // odometer
        let mut pos = n;
        loop {
            if pos == 0 {
                return Ok(acc.expect("at least one tuple"));
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < k {
                break;
            }
            idx[pos] = 0;
        }
    }
}

/// Exact moments of the plug-in estimator at batch size `B`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BatchExpectation {
    pub batch: usize,
    pub horizon: usize,
    /// `E[∂f(Ĵ_{H,B})]`.
    pub mean_partials: Vec<f64>,
    /// `∂f(J_H)`.
    pub partials_at_mean: Vec<f64>,
    /// `E‖Ĵ_{H,B} − J_H‖²`.
    pub mse_j: f64,
    /// `E[g]` with `g` built on a trajectory independent of `Ĵ`.
    pub mean_grad: Vec<f64>,
    /// `E‖g‖²` under the same sampling.
    pub grad_second_moment: f64,
    /// `J_H` recomputed from the enumeration.
    pub j_h: Vec<f64>,
}

/// `E[∂f(Ĵ_{H,B})]` from grouped outcomes.
pub fn batch_plugin_expectation(
    f: &Scalarization,
    outcomes: &[ReturnOutcome],
    batch: usize,
    budget: f64,
) -> Result<DVector<f64>> {
    expect_over_batch(outcomes, batch, budget, |mean| f.grad(mean.as_slice()))
}

/// Partials and their outer product stacked into one vector.
fn stack_moments(p: &DVector<f64>) -> DVector<f64> {
    let m = p.len();
    let mut v = DVector::zeros(m + m * m);
    v.rows_mut(0, m).copy_from(p);
    for i in 0..m {
        for k in 0..m {
            v[m + i * m + k] = p[i] * p[k];
        }
    }
    v
}

fn unstack_moments(v: &DVector<f64>, m: usize) -> (DVector<f64>, DMatrix<f64>) {
    let mean = v.rows(0, m).into_owned();
    let second = DMatrix::from_fn(m, m, |i, k| v[m + i * m + k]);
    (mean, second)
}

/// `(E[∂f(Ĵ_{H,B})], E[∂f(Ĵ_{H,B}) ∂f(Ĵ_{H,B})ᵀ])`.
pub fn plugin_partial_moments(
    f: &Scalarization,
    outcomes: &[ReturnOutcome],
    batch: usize,
    budget: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let v = expect_over_batch(outcomes, batch, budget, |mean| Ok(stack_moments(&f.grad(mean.as_slice())?)))?;
    Ok(unstack_moments(&v, f.n_objectives))
}

/// `(E[g], E‖g‖²)` for `g(τ, p)` with `τ` independent of the partials `p`,
/// given the first two moments of `p`. Uses linearity of `g` in `p`:
/// `E‖g‖² = Σ_τ P(τ) tr(G(τ)ᵀ G(τ) E[ppᵀ])` with `G` the per-objective gradients.
pub fn grad_moments(
    mdp: &TabularMdp,
    policy: &PolicyParams,
    trajectories: &[(Trajectory, f64)],
    mean_partials: &DVector<f64>,
    second_partials: &DMatrix<f64>,
) -> Result<(DVector<f64>, f64)> {
    let m = mdp.n_objectives;
    let d = policy.dim();
    let units: Vec<DVector<f64>> = (0..m).map(|i| DVector::from_fn(m, |k, _| f64::from(u8::from(i == k)))).collect();
    let mut mean = DVector::zeros(d);
    let mut second = 0.0;
    for (t, p) in trajectories {
        let mut g_mat = DMatrix::zeros(d, m);
        for (i, e) in units.iter().enumerate() {
            g_mat.set_column(i, &reinforce_grad(t, e, policy, mdp)?.g);
        }
        mean += &g_mat * mean_partials * *p;
        let gram = g_mat.transpose() * &g_mat;
        second += *p * gram.component_mul(second_partials).sum();
    }
    Ok((mean, second))
}

/// Enumerates trajectories and `B`-batches to compute the plug-in
/// estimator's partial-derivative mean, return MSE and gradient mean exactly.
pub fn enumerate_batch_expectation(
    mdp: &TabularMdp,
    policy: &PolicyParams,
    f: &Scalarization,
    horizon: usize,
    batch: usize,
    budget: f64,
) -> Result<BatchExpectation> {
    let trajs = enumerate_trajectories(mdp, policy, horizon, budget)?;
    let outcomes = return_outcomes(mdp, &trajs);
    let mut j_h = DVector::zeros(mdp.n_objectives);
    for o in &outcomes {
        j_h += &o.ret * o.prob;
    }
    let (mean_partials, second_partials) = plugin_partial_moments(f, &outcomes, batch, budget)?;
    let j_ref = j_h.clone();
    let mse = expect_over_batch(&outcomes, batch, budget, |mean| {
        Ok(DVector::from_element(1, (mean - &j_ref).norm_squared()))
    })?[0];
    let (mean_grad, grad_second_moment) = grad_moments(mdp, policy, &trajs, &mean_partials, &second_partials)?;
    Ok(BatchExpectation {
        batch,
        horizon,
        partials_at_mean: f.grad(j_h.as_slice())?.iter().copied().collect(),
        mean_partials: mean_partials.iter().copied().collect(),
        mse_j: mse,
        mean_grad: mean_grad.iter().copied().collect(),
        grad_second_moment,
        j_h: j_h.iter().copied().collect(),
    })
}

/// Exact `E[MLMC partials]`: the level distribution summed analytically and,
/// for every non-truncated level, all ordered sample tuples enumerated and
/// combined with the estimator's own combination rule.
pub fn mlmc_exact_expectation(
    f: &Scalarization,
    outcomes: &[ReturnOutcome],
    b_max: usize,
    coupled_base: bool,
    budget: f64,
) -> Result<DVector<f64>> {
    mlmc_expect_map(f, outcomes, b_max, coupled_base, budget, |p| p)
}

/// First and second moments of the MLMC partials.
pub fn mlmc_partial_moments(
    f: &Scalarization,
    outcomes: &[ReturnOutcome],
    b_max: usize,
    coupled_base: bool,
    budget: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let v = mlmc_expect_map(f, outcomes, b_max, coupled_base, budget, |p| stack_moments(&p))?;
    Ok(unstack_moments(&v, f.n_objectives))
}

fn mlmc_expect_map(
    f: &Scalarization,
    outcomes: &[ReturnOutcome],
    b_max: usize,
    coupled_base: bool,
    budget: f64,
    phi: impl Fn(DVector<f64>) -> DVector<f64>,
) -> Result<DVector<f64>> {
    if b_max == 0 {
        return Err(Error::config("B_max must be at least 1"));
    }
    let k = outcomes.len();
    let mut total: Option<DVector<f64>> = None;
    let mut untruncated_mass = 0.0;
    let mut q = 1u32;
    while !level_truncated(q, b_max) {
        let n = (1usize << q) + usize::from(!coupled_base);
        let required = (k as f64).powi(n as i32);
        if required > budget {
            return Err(Error::Budget { required, budget });
        }
        let e_q = ordered_expectation(outcomes, n, |rs, w, acc| {
            let owned: Vec<DVector<f64>> = rs.iter().map(|r| (*r).clone()).collect();
            let v = phi(mlmc_combine(f, q, b_max, coupled_base, &owned)?) * w;
            match acc {
                Some(a) => *a += v,
                None => *acc = Some(v),
            }
            Ok(())
        })?;
        let p_q = 0.5f64.powi(q as i32);
        match &mut total {
            Some(t) => *t += e_q * p_q,
            None => total = Some(e_q * p_q),
        }
        untruncated_mass += p_q;
        q += 1;
    }
    let single = expect_over_batch(outcomes, 1, budget, |mean| Ok(phi(f.grad(mean.as_slice())?)))? * (1.0 - untruncated_mass);
    Ok(match total {
        Some(t) => t + single,
        None => single,
    })
}
