use serde::{Deserialize, Serialize};

use super::NpgConfig;

/// One outer iteration, with policy quality measured by the oracle after the update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub exact_f: f64,
    pub exact_j: Vec<f64>,
    pub trajectories_this_iter: usize,
    pub omega_norm: f64,
    pub grad_norm_exact: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level_q: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncated: Option<bool>,
    pub step_beta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub algorithm: String,
    pub initial_exact_f: f64,
    pub per_outer_iteration: Vec<IterationRecord>,
    pub total_trajectories: usize,
    /// `Σ trajectories · H`.
    pub total_env_steps: usize,
    pub final_theta: Vec<f64>,
    pub config_echo: NpgConfig,
}

impl RunReport {
    pub fn final_exact_f(&self) -> f64 {
        self.per_outer_iteration.last().map_or(self.initial_exact_f, |r| r.exact_f)
    }

    /// Mean of `exact_f` over the last `window` iterations (all of them if fewer).
    pub fn tail_mean_f(&self, window: usize) -> f64 {
        let recs = &self.per_outer_iteration;
        if recs.is_empty() {
            return self.initial_exact_f;
        }
        let tail = &recs[recs.len().saturating_sub(window.max(1))..];
        tail.iter().map(|r| r.exact_f).sum::<f64>() / tail.len() as f64
    }

    /// Running totals of trajectories, aligned with `per_outer_iteration`.
    pub fn cumulative_trajectories(&self) -> Vec<usize> {
        self.per_outer_iteration
            .iter()
            .scan(0usize, |acc, r| {
                *acc += r.trajectories_this_iter;
                Some(*acc)
            })
            .collect()
    }
}
