//! Softmax-tabular policies.
//!
//! Parameters are laid out state-major: `theta[s * n_actions + a]`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform bound on `‖∇ log π(a|s)‖₂` for the softmax-tabular class.
pub const SOFTMAX_SCORE_BOUND: f64 = std::f64::consts::SQRT_2;

/// Smoothness constant of the log-policy used for the softmax-tabular class.
pub const SOFTMAX_SCORE_SMOOTHNESS: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub n_states: usize,
    pub n_actions: usize,
    pub theta: DVector<f64>,
}

impl PolicyParams {
    /// Uniform policy (`θ ≡ 0`).
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self { n_states, n_actions, theta: DVector::zeros(n_states * n_actions) }
    }

    pub fn from_theta(n_states: usize, n_actions: usize, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != n_states * n_actions {
            return Err(Error::config(format!(
                "theta has {} entries, expected {} ({} states x {} actions)",
                theta.len(),
                n_states * n_actions,
                n_states,
                n_actions
            )));
        }
        if let Some(i) = theta.iter().position(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("theta[{i}] is not finite")));
        }
        Ok(Self { n_states, n_actions, theta: DVector::from_vec(theta) })
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    #[inline]
    pub fn index(&self, state: usize, action: usize) -> usize {
        state * self.n_actions + action
    }

    pub fn action_probs(&self, state: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_actions];
        self.action_probs_into(state, &mut out);
        out
    }

    pub(crate) fn action_probs_into(&self, state: usize, out: &mut [f64]) {
        let block = &self.theta.as_slice()[state * self.n_actions..(state + 1) * self.n_actions];
        softmax_into(block, out);
    }

    /// Row-major `[s][a]` table of action probabilities.
    pub fn prob_table(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for s in 0..self.n_states {
            self.action_probs_into(s, &mut out[s * self.n_actions..(s + 1) * self.n_actions]);
        }
        out
    }

    /// `∇_θ log π(a|s)` as a dense vector.
    pub fn score(&self, state: usize, action: usize) -> DVector<f64> {
        let mut g = DVector::zeros(self.dim());
        let probs = self.action_probs(state);
        for (b, p) in probs.iter().enumerate() {
            g[self.index(state, b)] = if b == action { 1.0 - p } else { -p };
        }
        g
    }

    /// Nonzero block of the score: `e_a − π(·|s)`.
    pub(crate) fn score_block(probs: &[f64], action: usize, out: &mut [f64]) {
        for (b, (o, p)) in out.iter_mut().zip(probs).enumerate() {
            *o = if b == action { 1.0 - p } else { -p };
        }
    }

    pub fn score_bound(&self) -> f64 {
        SOFTMAX_SCORE_BOUND
    }

    /// `θ + step · direction`. Leaves `self` untouched.
    pub fn update(&self, step: f64, direction: &DVector<f64>) -> Result<Self> {
        if direction.len() != self.dim() {
            return Err(Error::config(format!(
                "direction has dimension {}, policy has {}",
                direction.len(),
                self.dim()
            )));
        }
        if let Some(i) = direction.iter().position(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("update direction entry {i} is not finite")));
        }
        let theta = &self.theta + direction * step;
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("updated theta is not finite".into()));
        }
        Ok(Self { n_states: self.n_states, n_actions: self.n_actions, theta })
    }
}

pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &x) in out.iter_mut().zip(logits) {
        *o = (x - max).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}
