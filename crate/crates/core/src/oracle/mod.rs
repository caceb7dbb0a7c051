//! Exact ground truth for small MDPs.
//!
//! Values, occupancy measures and gradients come from direct linear
//! solves; truncated-horizon quantities from a forward recursion over the
//! state distribution together with its parameter sensitivity. The
//! enumeration and grid-search oracles live in the submodules.

mod enumerate;
mod optimum;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::policy::PolicyParams;
use crate::scalarization::Scalarization;

pub use enumerate::{
    batch_plugin_expectation, enumerate_batch_expectation, enumerate_trajectories, grad_moments, mlmc_exact_expectation,
    mlmc_partial_moments, plugin_partial_moments, return_outcomes, BatchExpectation, ReturnOutcome,
    DEFAULT_ENUMERATION_BUDGET,
};
pub use optimum::{reference_optimum, ReferenceOptimum};

/// Relative eigenvalue cutoff for the Fisher pseudoinverse.
pub const FISHER_RANK_CUTOFF: f64 = 1e-10;

const RESIDUAL_TOL: f64 = 1e-10;

/// Infinite-horizon values and occupancy measures of one policy.
#[derive(Clone, Debug)]
pub struct ExactValues {
    /// `J_m = ρ · V_m`.
    pub j: DVector<f64>,
    /// `M × S`.
    pub v: DMatrix<f64>,
    /// `[m][s][a]`, flat.
    pub q: Vec<f64>,
    /// `[m][s][a]`, flat.
    pub advantage: Vec<f64>,
    /// `ν(s,a) = d_ρ(s) π(a|s)`, flat `[s][a]`.
    pub occupancy: Vec<f64>,
    /// `d_ρ = (1 − γ) ρᵀ (I − γ P_π)^{-1}`.
    pub state_occupancy: DVector<f64>,
    /// `∇_θ J_m` as rows of an `M × d` matrix.
    pub jacobian: DMatrix<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "horizon")]
pub enum GradientMode {
    Infinite,
    Truncated(usize),
}

/// Fisher matrix with its eigendecomposition.
#[derive(Clone, Debug)]
pub struct FisherSpectrum {
    pub matrix: DMatrix<f64>,
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
    /// Smallest eigenvalue above the rank cutoff.
    pub mu_range: f64,
    pub lambda_max: f64,
    pub cutoff: f64,
}

impl FisherSpectrum {
    pub fn from_matrix(matrix: DMatrix<f64>) -> Self {
        let sym = (&matrix + matrix.transpose()) * 0.5;
        let eig = sym.symmetric_eigen();
        let lambda_max = eig.eigenvalues.max().max(0.0);
        let cutoff = FISHER_RANK_CUTOFF * lambda_max;
        let mu_range = eig
            .eigenvalues
            .iter()
            .copied()
            .filter(|&l| l > cutoff)
            .fold(f64::INFINITY, f64::min);
        let mu_range = if mu_range.is_finite() { mu_range } else { 0.0 };
        Self { matrix, eigenvalues: eig.eigenvalues, eigenvectors: eig.eigenvectors, mu_range, lambda_max, cutoff }
    }

    pub fn rank(&self) -> usize {
        self.eigenvalues.iter().filter(|&&l| l > self.cutoff).count()
    }

    /// `F^† v` with the rank cutoff applied.
    pub fn pinv_apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(v.len());
        for (i, &l) in self.eigenvalues.iter().enumerate() {
            if l > self.cutoff {
                let u = self.eigenvectors.column(i);
                out += u * (u.dot(v) / l);
            }
        }
        out
    }

    /// Orthogonal projection onto the retained eigenspace.
    pub fn project_range(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(v.len());
        for (i, &l) in self.eigenvalues.iter().enumerate() {
            if l > self.cutoff {
                let u = self.eigenvectors.column(i);
                out += u * u.dot(v);
            }
        }
        out
    }
}

/// Everything the oracle knows about `(mdp, θ, f)`; the CLI `oracle` output.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExactQuantities {
    pub j: Vec<f64>,
    pub j_h: Vec<f64>,
    pub horizon: usize,
    pub f_value: f64,
    /// `[m][s]`.
    pub v: Vec<Vec<f64>>,
    /// `[m][s][a]`.
    pub q: Vec<Vec<Vec<f64>>>,
    pub advantage: Vec<Vec<Vec<f64>>>,
    /// `[s][a]`.
    pub occupancy: Vec<Vec<f64>>,
    pub state_occupancy: Vec<f64>,
    pub grad_f: Vec<f64>,
    pub grad_f_h: Vec<f64>,
    pub fisher: Vec<Vec<f64>>,
    pub mu_range: f64,
    pub lambda_f: f64,
    pub npg_direction: Vec<f64>,
}

pub(crate) fn policy_matrix(mdp: &TabularMdp, table: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let (s_n, a_n) = (mdp.n_states, mdp.n_actions);
    let mut p_pi = DMatrix::zeros(s_n, s_n);
    let mut r_bar = DMatrix::zeros(mdp.n_objectives, s_n);
    for s in 0..s_n {
        for a in 0..a_n {
            let pa = table[s * a_n + a];
            for (sp, &p) in mdp.transition_row(s, a).iter().enumerate() {
                p_pi[(s, sp)] += pa * p;
            }
            for m in 0..mdp.n_objectives {
                r_bar[(m, s)] += pa * mdp.reward(m, s, a);
            }
        }
    }
    (p_pi, r_bar)
}

/// `J^π` for a policy given as an `[s][a]` probability table.
pub(crate) fn returns_from_table(mdp: &TabularMdp, table: &[f64]) -> Result<DVector<f64>> {
    let (p_pi, r_bar) = policy_matrix(mdp, table);
    let system = DMatrix::identity(mdp.n_states, mdp.n_states) - p_pi * mdp.discount;
    let rho = DVector::from_column_slice(&mdp.initial_dist);
    // J_m = ρᵀ (I − γP)^{-1} r̄_m = xᵀ r̄_m with (I − γP)ᵀ x = ρ
    let x = solve(&system.transpose(), &DMatrix::from_column_slice(mdp.n_states, 1, rho.as_slice()))?;
    Ok(&r_bar * x.column(0))
}

fn solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let x = a
        .clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Numeric("singular linear system in value solve".into()))?;
    let residual = (a * &x - b).amax();
    if residual > RESIDUAL_TOL * (1.0 + b.amax()) {
        return Err(Error::Numeric(format!("linear solve residual {residual:e} above tolerance")));
    }
    Ok(x)
}

/// Solves the Bellman equations and assembles values, advantages and
/// occupancy measures together with `∇_θ J_m` from the policy gradient theorem.
pub fn exact_values(mdp: &TabularMdp, policy: &PolicyParams) -> Result<ExactValues> {
    mdp.check_policy(policy)?;
    let (s_n, a_n, m_n) = (mdp.n_states, mdp.n_actions, mdp.n_objectives);
    let gamma = mdp.discount;
    let table = policy.prob_table();
    let (p_pi, r_bar) = policy_matrix(mdp, &table);
    let system = DMatrix::identity(s_n, s_n) - p_pi * gamma;

    // V: S × M
    let v_cols = solve(&system, &r_bar.transpose())?;
    let v = v_cols.transpose();
    let rho = DMatrix::from_column_slice(s_n, 1, &mdp.initial_dist);
    let x = solve(&system.transpose(), &rho)?;
    let state_occupancy = DVector::from_iterator(s_n, x.column(0).iter().map(|v| v * (1.0 - gamma)));
    let j = DVector::from_iterator(m_n, (0..m_n).map(|m| (0..s_n).map(|s| mdp.initial_dist[s] * v[(m, s)]).sum()));

    let mut q = vec![0.0; m_n * s_n * a_n];
    let mut advantage = vec![0.0; m_n * s_n * a_n];
    for m in 0..m_n {
        for s in 0..s_n {
            for a in 0..a_n {
                let cont: f64 = mdp.transition_row(s, a).iter().enumerate().map(|(sp, p)| p * v[(m, sp)]).sum();
                let idx = (m * s_n + s) * a_n + a;
                q[idx] = mdp.reward(m, s, a) + gamma * cont;
                advantage[idx] = q[idx] - v[(m, s)];
            }
        }
    }
    let occupancy: Vec<f64> = (0..s_n * a_n).map(|i| state_occupancy[i / a_n] * table[i]).collect();

    // ∇J_m = 1/(1−γ) Σ_{s,a} ν(s,a) A_m(s,a) ∇log π(a|s)
    let d = s_n * a_n;
    let mut jacobian = DMatrix::zeros(m_n, d);
    let mut psi = vec![0.0; a_n];
    for s in 0..s_n {
        let probs = &table[s * a_n..(s + 1) * a_n];
        for a in 0..a_n {
            let w = occupancy[s * a_n + a] / (1.0 - gamma);
            if w == 0.0 {
                continue;
            }
            PolicyParams::score_block(probs, a, &mut psi);
            for m in 0..m_n {
                let adv = advantage[(m * s_n + s) * a_n + a];
                for (b, &p) in psi.iter().enumerate() {
                    jacobian[(m, s * a_n + b)] += w * adv * p;
                }
            }
        }
    }
    Ok(ExactValues { j, v, q, advantage, occupancy, state_occupancy, jacobian })
}

/// `J_H` together with `∇_θ J_{H,m}` (rows of an `M × d` matrix).
///
/// Propagates `μ_{t+1} = μ_t P_π` and its derivative `∂μ_t/∂θ`.
pub fn truncated_returns_and_jacobian(
    mdp: &TabularMdp,
    policy: &PolicyParams,
    horizon: usize,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    mdp.check_policy(policy)?;
    if horizon == 0 {
        return Err(Error::config("horizon must be at least 1"));
    }
    let (s_n, a_n, m_n) = (mdp.n_states, mdp.n_actions, mdp.n_objectives);
    let d = s_n * a_n;
    let table = policy.prob_table();
    let (p_pi, r_bar) = policy_matrix(mdp, &table);

    // ∂r̄_m(s)/∂θ_{s,b} = π(b|s)(r_m(s,b) − r̄_m(s)); ∂P_π(s,s')/∂θ_{s,b} = π(b|s)(P(s'|s,b) − P_π(s,s'))
    let mut dr_bar = vec![DMatrix::<f64>::zeros(s_n, d); m_n];
    let mut dp_pi = vec![DMatrix::<f64>::zeros(s_n, s_n); d];
    for s in 0..s_n {
        for b in 0..a_n {
            let i = s * a_n + b;
            let pb = table[i];
            for m in 0..m_n {
                dr_bar[m][(s, i)] = pb * (mdp.reward(m, s, b) - r_bar[(m, s)]);
            }
            for (sp, &p) in mdp.transition_row(s, b).iter().enumerate() {
                dp_pi[i][(s, sp)] = pb * (p - p_pi[(s, sp)]);
            }
        }
    }

    let mut mu = DVector::from_column_slice(&mdp.initial_dist);
    let mut dmu = DMatrix::<f64>::zeros(s_n, d);
    let mut j_h = DVector::zeros(m_n);
    let mut jac = DMatrix::zeros(m_n, d);
    let mut disc = 1.0;
    let p_t = p_pi.transpose();
    for t in 0..horizon {
        for m in 0..m_n {
            let rm = r_bar.row(m).transpose();
            j_h[m] += disc * mu.dot(&rm);
            let g = dmu.transpose() * &rm + dr_bar[m].transpose() * &mu;
            for i in 0..d {
                jac[(m, i)] += disc * g[i];
            }
        }
        if t + 1 == horizon {
            break;
        }
        let mut next_dmu = &p_t * &dmu;
        for i in 0..d {
            let col = dp_pi[i].transpose() * &mu;
            for sp in 0..s_n {
                next_dmu[(sp, i)] += col[sp];
            }
        }
        mu = &p_t * mu;
        dmu = next_dmu;
        disc *= mdp.discount;
    }
    Ok((j_h, jac))
}

/// `J_H,m = Σ_{t<H} γ^t (μ_t · r̄_m)`.
pub fn exact_returns_truncated(mdp: &TabularMdp, policy: &PolicyParams, horizon: usize) -> Result<DVector<f64>> {
    mdp.check_policy(policy)?;
    if horizon == 0 {
        return Err(Error::config("horizon must be at least 1"));
    }
    let table = policy.prob_table();
    let (p_pi, r_bar) = policy_matrix(mdp, &table);
    let p_t = p_pi.transpose();
    let mut mu = DVector::from_column_slice(&mdp.initial_dist);
    let mut out = DVector::zeros(mdp.n_objectives);
    let mut disc = 1.0;
    for _ in 0..horizon {
        out += &r_bar * &mu * disc;
        mu = &p_t * mu;
        disc *= mdp.discount;
    }
    Ok(out)
}

/// `∇_θ f(J)` (or `∇_θ f(J_H)`) by the chain rule `Σ_m ∂_m f · ∇_θ J_m`.
pub fn exact_scalarized_gradient(
    mdp: &TabularMdp,
    policy: &PolicyParams,
    f: &Scalarization,
    mode: GradientMode,
) -> Result<DVector<f64>> {
    let (j, jac) = match mode {
        GradientMode::Infinite => {
            let ev = exact_values(mdp, policy)?;
            (ev.j, ev.jacobian)
        }
        GradientMode::Truncated(h) => truncated_returns_and_jacobian(mdp, policy, h)?,
    };
    let partials = f.grad(j.as_slice())?;
    Ok(jac.transpose() * partials)
}

/// `F = Σ_{s,a} ν(s,a) ψ(s,a) ψ(s,a)ᵀ` and its spectrum.
pub fn exact_fisher(mdp: &TabularMdp, policy: &PolicyParams) -> Result<FisherSpectrum> {
    let ev = exact_values(mdp, policy)?;
    Ok(fisher_from_occupancy(policy, &ev.occupancy))
}

pub(crate) fn fisher_from_occupancy(policy: &PolicyParams, occupancy: &[f64]) -> FisherSpectrum {
    let (s_n, a_n) = (policy.n_states, policy.n_actions);
    let d = s_n * a_n;
    let mut f = DMatrix::zeros(d, d);
    let mut psi = vec![0.0; a_n];
    for s in 0..s_n {
        let probs = policy.action_probs(s);
        for a in 0..a_n {
            let w = occupancy[s * a_n + a];
            if w == 0.0 {
                continue;
            }
            PolicyParams::score_block(&probs, a, &mut psi);
            for i in 0..a_n {
                for k in 0..a_n {
                    f[(s * a_n + i, s * a_n + k)] += w * psi[i] * psi[k];
                }
            }
        }
    }
    FisherSpectrum::from_matrix(f)
}

/// `ω* = F^† ∇_θ f(J)`.
pub fn exact_npg_direction(mdp: &TabularMdp, policy: &PolicyParams, f: &Scalarization) -> Result<DVector<f64>> {
    let fisher = exact_fisher(mdp, policy)?;
    let grad = exact_scalarized_gradient(mdp, policy, f, GradientMode::Infinite)?;
    Ok(fisher.pinv_apply(&grad))
}

fn table_3d(flat: &[f64], m_n: usize, s_n: usize, a_n: usize) -> Vec<Vec<Vec<f64>>> {
    (0..m_n)
        .map(|m| (0..s_n).map(|s| flat[(m * s_n + s) * a_n..(m * s_n + s + 1) * a_n].to_vec()).collect())
        .collect()
}

fn rows(mat: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..mat.nrows()).map(|i| mat.row(i).iter().copied().collect()).collect()
}

/// Collects every exact quantity for `(mdp, θ, f)` at truncation `horizon`.
pub fn exact_quantities(
    mdp: &TabularMdp,
    policy: &PolicyParams,
    f: &Scalarization,
    horizon: usize,
) -> Result<ExactQuantities> {
    let ev = exact_values(mdp, policy)?;
    let (j_h, jac_h) = truncated_returns_and_jacobian(mdp, policy, horizon)?;
    let fisher = fisher_from_occupancy(policy, &ev.occupancy);
    let grad_f = ev.jacobian.transpose() * f.grad(ev.j.as_slice())?;
    let grad_f_h = jac_h.transpose() * f.grad(j_h.as_slice())?;
    let npg = fisher.pinv_apply(&grad_f);
    let (s_n, a_n, m_n) = (mdp.n_states, mdp.n_actions, mdp.n_objectives);
    Ok(ExactQuantities {
        j: ev.j.iter().copied().collect(),
        j_h: j_h.iter().copied().collect(),
        horizon,
        f_value: f.value(ev.j.as_slice())?,
        v: rows(&ev.v),
        q: table_3d(&ev.q, m_n, s_n, a_n),
        advantage: table_3d(&ev.advantage, m_n, s_n, a_n),
        occupancy: table_3d(&ev.occupancy, 1, s_n, a_n).remove(0),
        state_occupancy: ev.state_occupancy.iter().copied().collect(),
        grad_f: grad_f.iter().copied().collect(),
        grad_f_h: grad_f_h.iter().copied().collect(),
        fisher: rows(&fisher.matrix),
        mu_range: fisher.mu_range,
        lambda_f: fisher.lambda_max,
        npg_direction: npg.iter().copied().collect(),
    })
}

/// Right-hand side of the horizon-truncation gradient bound.
pub fn truncation_gradient_bound(m: usize, g1: f64, c: f64, l_f: f64, gamma: f64, horizon: usize) -> f64 {
    let m = m as f64;
    let h = horizon as f64;
    let gh = gamma.powi(horizon as i32);
    m * g1 * gh / (1.0 - gamma).powi(2)
        * (m.sqrt() * l_f * (1.0 - gh - h * gh * (1.0 - gamma)) / (1.0 - gamma) + c * (1.0 + h * (1.0 - gamma)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::suite;
    use crate::policy::SOFTMAX_SCORE_BOUND;
    use crate::scalarization::PolicyClassConstants;

    fn theta(v: &[f64]) -> PolicyParams {
        PolicyParams::from_theta(2, 2, v.to_vec()).unwrap()
    }

    #[test]
    fn constant_mdp_value() {
        let mdp = suite::constant(0.9, 1, 1.0);
        let ev = exact_values(&mdp, &PolicyParams::zeros(1, 1)).unwrap();
        assert!((ev.j[0] - 10.0).abs() < 1e-12);
        let jh = exact_returns_truncated(&suite::constant(0.5, 1, 1.0), &PolicyParams::zeros(1, 1), 3).unwrap();
        assert_eq!(jh.as_slice(), &[1.75]);
    }

    #[test]
    fn uniform_bandit_values() {
        let mdp = suite::symmetric_bandit(0.9);
        let ev = exact_values(&mdp, &PolicyParams::zeros(1, 2)).unwrap();
        assert!((ev.j[0] - 5.0).abs() < 1e-12 && (ev.j[1] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn occupancy_and_advantage_invariants() {
        for gamma in [0.5, 0.9] {
            let mdp = suite::chain(gamma);
            let p = theta(&[0.7, -0.4, 1.1, 0.3]);
            let ev = exact_values(&mdp, &p).unwrap();
            assert!((ev.occupancy.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            assert!(ev.occupancy.iter().all(|&x| x >= 0.0));
            for s in 0..2 {
                let row: f64 = ev.occupancy[s * 2..s * 2 + 2].iter().sum();
                assert!((row - ev.state_occupancy[s]).abs() < 1e-10);
                let probs = p.action_probs(s);
                for m in 0..2 {
                    let c: f64 = (0..2).map(|a| probs[a] * ev.advantage[(m * 2 + s) * 2 + a]).sum();
                    assert!(c.abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn truncated_tail_bound_and_limit() {
        let mdp = suite::chain(0.9);
        let p = theta(&[0.2, 0.1, -0.5, 0.9]);
        let j = exact_values(&mdp, &p).unwrap().j;
        for h in [1, 5, 20, 60] {
            let jh = exact_returns_truncated(&mdp, &p, h).unwrap();
            assert!((&j - &jh).amax() <= 0.9f64.powi(h as i32) / 0.1 + 1e-12);
        }
        let jh = exact_returns_truncated(&mdp, &p, 400).unwrap();
        assert!((j - jh).amax() < 1e-10);
    }

    #[test]
    fn truncated_jacobian_matches_plain_recursion() {
        let mdp = suite::chain(0.8);
        let p = theta(&[0.2, 0.1, -0.5, 0.9]);
        let (jh, _) = truncated_returns_and_jacobian(&mdp, &p, 7).unwrap();
        assert!((jh - exact_returns_truncated(&mdp, &p, 7).unwrap()).amax() < 1e-14);
    }

    fn fd_gradient(mdp: &TabularMdp, p: &PolicyParams, f: &Scalarization, mode: GradientMode) -> DVector<f64> {
        let h = 1e-5;
        let eval = |th: &DVector<f64>| {
            let q = PolicyParams::from_theta(p.n_states, p.n_actions, th.iter().copied().collect()).unwrap();
            let j = match mode {
                GradientMode::Infinite => exact_values(mdp, &q).unwrap().j,
                GradientMode::Truncated(hz) => exact_returns_truncated(mdp, &q, hz).unwrap(),
            };
            f.value(j.as_slice()).unwrap()
        };
        DVector::from_iterator(
            p.dim(),
            (0..p.dim()).map(|i| {
                let mut up = p.theta.clone();
                up[i] += h;
                let mut dn = p.theta.clone();
                dn[i] -= h;
                (eval(&up) - eval(&dn)) / (2.0 * h)
            }),
        )
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mdp = suite::chain(0.9);
        let fs = [
            Scalarization::alpha_fair(2, 2.0, 0.05).unwrap(),
            Scalarization::weighted_sum(vec![0.3, 0.8]).unwrap(),
            Scalarization::kinked_quadratic(vec![3.0, 6.0], 0.5).unwrap(),
        ];
        for f in &fs {
            for th in [[0.0, 0.0, 0.0, 0.0], [0.7, -0.4, 1.1, 0.3], [-1.2, 0.5, 0.2, -0.8]] {
                let p = theta(&th);
                for mode in [GradientMode::Infinite, GradientMode::Truncated(4)] {
                    let g = exact_scalarized_gradient(&mdp, &p, f, mode).unwrap();
                    let fd = fd_gradient(&mdp, &p, f, mode);
                    assert!((&g - &fd).amax() < 1e-6, "{} {:?}: {} vs {}", f.kind(), mode, g, fd);
                }
            }
        }
    }

    #[test]
    fn symmetric_linear_gradient_vanishes() {
        let mdp = suite::symmetric_bandit(0.9);
        let f = Scalarization::weighted_sum(vec![1.0, 1.0]).unwrap();
        let g = exact_scalarized_gradient(&mdp, &PolicyParams::zeros(1, 2), &f, GradientMode::Infinite).unwrap();
        assert!(g.amax() < 1e-12);
        assert_eq!(exact_npg_direction(&mdp, &PolicyParams::zeros(1, 2), &f).unwrap().amax(), 0.0);
    }

    #[test]
    fn gradient_norm_bound() {
        let mdp = suite::chain(0.9);
        let f = Scalarization::alpha_fair(2, 2.0, 0.5).unwrap();
        let k = f.constants(0.9, PolicyClassConstants::softmax_tabular(0.0)).unwrap();
        for th in [[0.0, 0.0, 0.0, 0.0], [3.0, -3.0, 2.0, 1.0]] {
            let g = exact_scalarized_gradient(&mdp, &theta(&th), &f, GradientMode::Infinite).unwrap();
            assert!(g.norm() <= k.c * 2.0 * SOFTMAX_SCORE_BOUND / 0.01);
        }
    }

    #[test]
    fn fisher_uniform_bandit() {
        let mdp = suite::symmetric_bandit(0.9);
        let fs = exact_fisher(&mdp, &PolicyParams::zeros(1, 2)).unwrap();
        let mut eig: Vec<f64> = fs.eigenvalues.iter().copied().collect();
        eig.sort_by(f64::total_cmp);
        assert!(eig[0].abs() < 1e-12);
        assert!((eig[1] - 0.5).abs() < 1e-12);
        assert!((fs.mu_range - 0.5).abs() < 1e-12);
        assert_eq!(fs.rank(), 1);
    }

    #[test]
    fn fisher_null_space_is_per_state_shift() {
        let mdp = suite::chain(0.9);
        let fs = exact_fisher(&mdp, &theta(&[0.3, -0.1, 0.9, 0.0])).unwrap();
        for s in 0..2 {
            let mut v = DVector::zeros(4);
            v[2 * s] = 1.0;
            v[2 * s + 1] = 1.0;
            assert!((&fs.matrix * &v).amax() < 1e-12);
        }
        assert_eq!(fs.rank(), 2);
        assert!(fs.mu_range > 1e-4);
    }

    #[test]
    fn npg_direction_is_range_solution() {
        let mdp = suite::chain(0.9);
        let p = theta(&[0.3, -0.1, 0.9, 0.0]);
        let f = Scalarization::alpha_fair(2, 2.0, 0.05).unwrap();
        let fs = exact_fisher(&mdp, &p).unwrap();
        let g = exact_scalarized_gradient(&mdp, &p, &f, GradientMode::Infinite).unwrap();
        let w = fs.pinv_apply(&g);
        assert!((&fs.matrix * &w - fs.project_range(&g)).norm() < 1e-8);
        // null-space components of the gradient do not move ω*
        let mut shifted = g.clone();
        shifted[0] += 0.37;
        shifted[1] += 0.37;
        assert!((fs.pinv_apply(&shifted) - &w).amax() < 1e-8);
        assert!((fs.project_range(&w) - &w).amax() < 1e-10);
    }

    #[test]
    fn scaled_identity_on_range() {
        // single-state 2-action uniform Fisher is 0.5 on span{(1,-1)}
        let mdp = suite::symmetric_bandit(0.9);
        let fs = exact_fisher(&mdp, &PolicyParams::zeros(1, 2)).unwrap();
        let g = DVector::from_vec(vec![0.3, -0.3]);
        assert!((fs.pinv_apply(&g) - &g / 0.5).amax() < 1e-12);
    }

    #[test]
    fn truncation_gradient_bound_holds() {
        let mdp = suite::chain(0.9);
        let p = theta(&[0.3, -0.1, 0.9, 0.0]);
        for f in [Scalarization::alpha_fair(2, 2.0, 0.5).unwrap(), Scalarization::kinked_quadratic(vec![2.0, 5.0], 1.0).unwrap()] {
            let k = f.constants(0.9, PolicyClassConstants::softmax_tabular(0.0)).unwrap();
            let g = exact_scalarized_gradient(&mdp, &p, &f, GradientMode::Infinite).unwrap();
            for h in [5, 10, 20] {
                let gh = exact_scalarized_gradient(&mdp, &p, &f, GradientMode::Truncated(h)).unwrap();
                let bound = truncation_gradient_bound(2, SOFTMAX_SCORE_BOUND, k.c, k.l_f, 0.9, h);
                assert!((&g - gh).norm() <= bound, "H={h}");
            }
        }
    }
}
