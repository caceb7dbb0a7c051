//! Finite multi-objective MDPs and trajectory sampling.

mod io;
pub mod rng;
pub mod suite;

use std::fmt;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::PolicyParams;

pub use io::MdpFile;
pub use rng::{Lane, LaneBlock, LaneRng, Phase, RngStream};

const SUM_TOL: f64 = 1e-12;

/// A finite discounted MDP with `M` reward channels.
///
/// Transitions are stored flat as `[s][a][s']`, rewards as `[m][s][a]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub n_objectives: usize,
    pub transitions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub discount: f64,
    pub initial_dist: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: &'static str,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl TabularMdp {
    /// Builds an MDP and rejects it if any invariant fails.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        n_objectives: usize,
        transitions: Vec<f64>,
        rewards: Vec<f64>,
        discount: f64,
        initial_dist: Vec<f64>,
    ) -> Result<Self> {
        let mdp = Self { n_states, n_actions, n_objectives, transitions, rewards, discount, initial_dist };
        let violations = mdp.validate();
        if violations.is_empty() {
            Ok(mdp)
        } else {
            let msgs: Vec<String> = violations.iter().map(|v| v.message.clone()).collect();
            Err(Error::config(format!("invalid mdp: {}", msgs.join("; "))))
        }
    }

    /// Every invariant violation, in a stable order. Empty means valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut push = |rule, message: String| out.push(Violation { rule, message });
        let (s_n, a_n, m_n) = (self.n_states, self.n_actions, self.n_objectives);
        if s_n == 0 || a_n == 0 || m_n == 0 {
            push("dimensions", format!("dimensions must be positive (S={s_n}, A={a_n}, M={m_n})"));
            return out;
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            push("discount", format!("discount {} outside (0,1)", self.discount));
        }
        if self.transitions.len() != s_n * a_n * s_n {
            push(
                "transitions_shape",
                format!("transitions have {} entries, expected {}", self.transitions.len(), s_n * a_n * s_n),
            );
        } else {
            for s in 0..s_n {
                for a in 0..a_n {
                    let row = self.transition_row(s, a);
                    if let Some(sp) = row.iter().position(|&p| !p.is_finite() || p < 0.0) {
                        push(
                            "transition_negative",
                            format!("row (s={s},a={a}) has invalid entry {} at s'={sp}", row[sp]),
                        );
                    }
                    let total: f64 = row.iter().sum();
                    if (total - 1.0).abs() > SUM_TOL {
                        push("transition_sum", format!("row (s={s},a={a}) sums to {total}"));
                    }
                }
            }
        }
        if self.rewards.len() != m_n * s_n * a_n {
            push(
                "rewards_shape",
                format!("rewards have {} entries, expected {}", self.rewards.len(), m_n * s_n * a_n),
            );
        } else {
            for m in 0..m_n {
                for s in 0..s_n {
                    for a in 0..a_n {
                        let r = self.reward(m, s, a);
                        if !(0.0..=1.0).contains(&r) {
                            push("reward_range", format!("reward out of [0,1] at (m={m},s={s},a={a}): {r}"));
                        }
                    }
                }
            }
        }
        if self.initial_dist.len() != s_n {
            push(
                "initial_shape",
                format!("initial distribution has {} entries, expected {s_n}", self.initial_dist.len()),
            );
        } else {
            if let Some(s) = self.initial_dist.iter().position(|&p| !p.is_finite() || p < 0.0) {
                push("initial_negative", format!("initial distribution has invalid entry at s={s}"));
            }
            let total: f64 = self.initial_dist.iter().sum();
            if (total - 1.0).abs() > SUM_TOL {
                push("initial_sum", format!("initial distribution sums to {total}"));
            }
        }
        out
    }

    #[inline]
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transitions[start..start + self.n_states]
    }

    #[inline]
    pub fn reward(&self, m: usize, s: usize, a: usize) -> f64 {
        self.rewards[(m * self.n_states + s) * self.n_actions + a]
    }

    /// Upper bound `(1 − γ^H)/(1 − γ)` on any component of a truncated return.
    pub fn return_bound(&self, horizon: usize) -> f64 {
        (1.0 - self.discount.powi(horizon as i32)) / (1.0 - self.discount)
    }

    pub fn check_policy(&self, policy: &PolicyParams) -> Result<()> {
        if policy.n_states != self.n_states || policy.n_actions != self.n_actions {
            return Err(Error::config(format!(
                "policy is {}x{}, mdp is {}x{}",
                policy.n_states, policy.n_actions, self.n_states, self.n_actions
            )));
        }
        Ok(())
    }

    /// Rolls out `horizon` steps: `s_0 ~ ρ`, `a_t ~ π(·|s_t)`, `s_{t+1} ~ P(·|s_t,a_t)`.
    pub fn sample_trajectory(
        &self,
        policy: &PolicyParams,
        horizon: usize,
        stream: &RngStream,
    ) -> Result<Trajectory> {
        self.check_policy(policy)?;
        if horizon == 0 {
            return Err(Error::config("horizon must be at least 1"));
        }
        let table = policy.prob_table();
        Ok(self.sample_with_table(&table, horizon, stream))
    }

    /// Sampling against a precomputed `[s][a]` probability table.
    pub(crate) fn sample_with_table(&self, table: &[f64], horizon: usize, stream: &RngStream) -> Trajectory {
        let mut rng = stream.rng();
        let mut steps = Vec::with_capacity(horizon);
        let mut s = rng.categorical(&self.initial_dist);
        for t in 0..horizon {
            let probs = &table[s * self.n_actions..(s + 1) * self.n_actions];
            let a = rng.categorical(probs);
            steps.push((s, a));
            if t + 1 < horizon {
                s = rng.categorical(self.transition_row(s, a));
            }
        }
        Trajectory { steps }
    }

    /// `Σ_t γ^t r_m(s_t, a_t)` for each objective.
    pub fn truncated_return(&self, traj: &Trajectory) -> DVector<f64> {
        let mut out = DVector::zeros(self.n_objectives);
        let mut disc = 1.0;
        for &(s, a) in &traj.steps {
            for m in 0..self.n_objectives {
                out[m] += disc * self.reward(m, s, a);
            }
            disc *= self.discount;
        }
        out
    }
}

/// A length-`H` rollout `(s_0, a_0, …, s_{H−1}, a_{H−1})`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<(usize, usize)>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::suite;

    fn one_state(reward: f64, gamma: f64) -> TabularMdp {
        TabularMdp::new(1, 1, 1, vec![1.0], vec![reward], gamma, vec![1.0]).unwrap()
    }

    #[test]
    fn degenerate_mdp_is_valid() {
        assert!(one_state(1.0, 0.5).validate().is_empty());
    }

    #[test]
    fn bad_row_sum_is_reported() {
        let mdp = TabularMdp {
            n_states: 2,
            n_actions: 1,
            n_objectives: 1,
            transitions: vec![0.9, 0.0, 0.0, 1.0],
            rewards: vec![0.0, 0.0],
            discount: 0.9,
            initial_dist: vec![1.0, 0.0],
        };
        let v = mdp.validate();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, "transition_sum");
        assert_eq!(v[0].message, "row (s=0,a=0) sums to 0.9");
    }

    #[test]
    fn reward_out_of_range_is_reported() {
        let mut mdp = one_state(1.0, 0.5);
        mdp.rewards[0] = 1.5;
        let v = mdp.validate();
        assert_eq!(v.len(), 1);
        assert!(v[0].message.starts_with("reward out of [0,1]"));
        assert!(v[0].message.contains("(m=0,s=0,a=0)"));
    }

    #[test]
    fn other_violations() {
        let mut mdp = one_state(1.0, 0.5);
        mdp.discount = 1.0;
        mdp.initial_dist = vec![0.5];
        let rules: Vec<_> = mdp.validate().iter().map(|v| v.rule).collect();
        assert_eq!(rules, vec!["discount", "initial_sum"]);
        assert!(TabularMdp::new(1, 1, 1, vec![1.0], vec![-0.1], 0.5, vec![1.0]).is_err());
    }

    #[test]
    fn single_state_trajectory() {
        let mdp = suite::symmetric_bandit(0.9);
        let p = PolicyParams::zeros(1, 2);
        let t = mdp.sample_trajectory(&p, 3, &RngStream::new(1, Lane::new(0, Phase::Campaign(0), 0))).unwrap();
        assert_eq!(t.horizon(), 3);
        assert!(t.steps.iter().all(|&(s, a)| s == 0 && a < 2));
    }

    #[test]
    fn deterministic_path() {
        // 0 -a0-> 1 -a0-> 0 ...
        let mdp = TabularMdp::new(
            2,
            2,
            1,
            vec![0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0],
            vec![0.0; 4],
            0.9,
            vec![1.0, 0.0],
        )
        .unwrap();
        let p = PolicyParams::from_theta(2, 2, vec![40.0, 0.0, 40.0, 0.0]).unwrap();
        assert!(p.action_probs(0)[0] >= 1.0 - 1e-12);
        for seed in 0..20 {
            let t = mdp.sample_trajectory(&p, 4, &RngStream::new(seed, Lane::new(0, Phase::Campaign(0), 0))).unwrap();
            assert_eq!(t.steps, vec![(0, 0), (1, 0), (0, 0), (1, 0)]);
        }
    }

    #[test]
    fn sampling_replays_and_rejects_mismatch() {
        let mdp = suite::chain(0.9);
        let p = PolicyParams::from_theta(2, 2, vec![0.3, -0.2, 0.1, 0.5]).unwrap();
        let stream = RngStream::new(99, Lane::new(4, Phase::Inner(3), 17));
        let a = mdp.sample_trajectory(&p, 25, &stream).unwrap();
        let b = mdp.sample_trajectory(&p, 25, &stream).unwrap();
        assert_eq!(a, b);
        assert!(mdp.sample_trajectory(&PolicyParams::zeros(1, 2), 5, &stream).is_err());
        assert!(mdp.sample_trajectory(&p, 0, &stream).is_err());
    }

    #[test]
    fn truncated_return_cases() {
        let mdp = one_state(1.0, 0.5);
        let t = Trajectory { steps: vec![(0, 0); 3] };
        assert_eq!(mdp.truncated_return(&t).as_slice(), &[1.75]);

        let bandit = suite::symmetric_bandit(0.9);
        let t = Trajectory { steps: vec![(0, 0), (0, 1)] };
        let r = bandit.truncated_return(&t);
        assert!((r[0] - 1.0).abs() < 1e-15 && (r[1] - 0.9).abs() < 1e-15);

        let zero = TabularMdp::new(1, 2, 2, vec![1.0, 1.0], vec![0.0, 0.0, 1.0, 1.0], 0.7, vec![1.0]).unwrap();
        let t = Trajectory { steps: vec![(0, 1), (0, 0), (0, 1)] };
        assert_eq!(zero.truncated_return(&t)[0], 0.0);
    }

    #[test]
    fn returns_stay_in_box() {
        let mdp = suite::chain(0.9);
        let p = PolicyParams::from_theta(2, 2, vec![1.0, -1.0, 0.0, 2.0]).unwrap();
        for h in [1, 5, 40] {
            for i in 0..200 {
                let t = mdp.sample_trajectory(&p, h, &RngStream::new(5, Lane::new(0, Phase::Campaign(0), i))).unwrap();
                let r = mdp.truncated_return(&t);
                assert!(r.iter().all(|&x| x >= 0.0 && x <= mdp.return_bound(h) + 1e-12));
            }
        }
    }
}
