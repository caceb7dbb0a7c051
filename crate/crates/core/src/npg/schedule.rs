use serde::{Deserialize, Serialize};

use super::{EstimatorConfig, NpgConfig};
use crate::error::{Error, Result};
use crate::scalarization::TheoryConstants;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Theorem {
    /// MLMC-NPG: `α ∝ ε log(1/ε)`, `B_max = ε⁻²`, `B = 1`.
    Theorem1,
    /// Vanilla NPG under second-order smoothness: `B_1 = B_2 = 1/((1−γ)²ε)`.
    Theorem2,
}

/// How a theorem schedule was derived; echoed into run reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleNotes {
    pub theorem: Theorem,
    pub epsilon: f64,
    /// Constant in `K = k_constant / (α ε)`.
    pub k_constant: f64,
    pub alpha_uncapped: f64,
    pub alpha_cap: f64,
    pub alpha_clamped: bool,
    pub r0: f64,
    pub mu: f64,
}

/// Rounds up, ignoring representation error a few ulps above an integer.
fn ceil_count(x: f64) -> usize {
    (x - 1e-9 * x.abs()).ceil().max(1.0) as usize
}

/// `H = ⌈2 log(1/ε) / log(1/γ)⌉`.
pub fn theorem_horizon(epsilon: f64, gamma: f64) -> usize {
    ceil_count(2.0 * (1.0 / epsilon).ln() / (1.0 / gamma).ln())
}

/// Fills `α, β, K, N, H` and the batch sizes from the theorem statements.
///
/// `α` is clamped to `μ / (4 L_J G_1²)` when the Theorem 1 formula exceeds
/// it; `N` uses `log(R_0² / ε²)` and is at least 1.
pub fn theorem_schedule(
    epsilon: f64,
    constants: &TheoryConstants,
    gamma: f64,
    r0: f64,
    which: Theorem,
    master_seed: u64,
) -> Result<NpgConfig> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::config(format!("epsilon must lie in (0,1), got {epsilon}")));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::config(format!("gamma must lie in (0,1), got {gamma}")));
    }
    let TheoryConstants { c, g1, l_j, mu, .. } = *constants;
    if ![c, g1, l_j, mu, r0].iter().all(|x| x.is_finite()) || mu <= 0.0 || l_j <= 0.0 {
        return Err(Error::config("theory constants must be finite with mu, L_J > 0"));
    }
    let m = constants.n_objectives as f64;
    let alpha_cap = mu / (4.0 * l_j * g1 * g1);
    let alpha_uncapped = match which {
        Theorem::Theorem1 => alpha_cap * epsilon * (1.0 / epsilon).ln(),
        Theorem::Theorem2 => alpha_cap,
    };
    let alpha = alpha_uncapped.min(alpha_cap);
    let k_constant = 1.0;
    let horizon = theorem_horizon(epsilon, gamma);
    let n_scale = 4.0 * c * m * g1 / (mu * mu * (1.0 - gamma).powi(2));
    let n_log = (r0 * r0 / (epsilon * epsilon)).ln();
    let inner_iters = ceil_count(n_scale * n_log.max(0.0));
    let estimator = match which {
        Theorem::Theorem1 => EstimatorConfig::Mlmc { b_max: ceil_count(1.0 / (epsilon * epsilon)), b: 1, coupled_base: true },
        Theorem::Theorem2 => {
            let b = ceil_count(1.0 / ((1.0 - gamma).powi(2) * epsilon));
            EstimatorConfig::Empirical { b1: b, b2: b }
        }
    };
    Ok(NpgConfig {
        outer_iters: ceil_count(k_constant / (alpha * epsilon)),
        inner_iters,
        horizon,
        step_alpha: alpha,
        step_beta: mu / (g1 * g1),
        estimator,
        omega_init: None,
        warm_start: false,
        master_seed,
        fisher_normalized: true,
        theta_init: None,
        refresh_beta: false,
        schedule: Some(ScheduleNotes {
            theorem: which,
            epsilon,
            k_constant,
            alpha_uncapped,
            alpha_cap,
            alpha_clamped: alpha_uncapped > alpha_cap,
            r0,
            mu,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalarization::{PolicyClassConstants, Scalarization};

    fn constants(gamma: f64) -> TheoryConstants {
        Scalarization::alpha_fair(2, 2.0, 0.5)
            .unwrap()
            .constants(gamma, PolicyClassConstants::softmax_tabular(0.1))
            .unwrap()
    }

    #[test]
    fn theorem1_example() {
        let cfg = theorem_schedule(0.1, &constants(0.9), 0.9, 1.0, Theorem::Theorem1, 0).unwrap();
        assert_eq!(cfg.horizon, 44);
        assert_eq!(cfg.estimator, EstimatorConfig::Mlmc { b_max: 100, b: 1, coupled_base: true });
        let notes = cfg.schedule.unwrap();
        assert!(!notes.alpha_clamped);
        assert!((cfg.step_alpha - notes.alpha_cap * 0.1 * 10f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn theorem2_example() {
        let cfg = theorem_schedule(0.1, &constants(0.9), 0.9, 1.0, Theorem::Theorem2, 0).unwrap();
        assert_eq!(cfg.estimator, EstimatorConfig::Empirical { b1: 1000, b2: 1000 });
        assert_eq!(cfg.horizon, 44);
        assert!((cfg.step_beta - 0.05).abs() < 1e-15);
    }

    #[test]
    fn theorem1_alpha_stays_below_cap() {
        let cfg = theorem_schedule(0.5, &constants(0.9), 0.9, 1.0, Theorem::Theorem1, 0).unwrap();
        let notes = cfg.schedule.unwrap();
        // ε log(1/ε) ≤ 1/e on (0,1), so the natural-log formula stays under the cap
        assert!(!notes.alpha_clamped);
        assert!(cfg.step_alpha <= notes.alpha_cap);
    }

    #[test]
    fn rejects_epsilon_outside_unit_interval() {
        for eps in [0.0, 1.0, 1.5, f64::NAN] {
            assert!(theorem_schedule(eps, &constants(0.9), 0.9, 1.0, Theorem::Theorem1, 0).is_err());
        }
    }

    #[test]
    fn inner_iterations_follow_log_ratio() {
        let k = constants(0.5);
        let cfg = theorem_schedule(0.1, &k, 0.5, 2.0, Theorem::Theorem2, 0).unwrap();
        let expect = 4.0 * k.c * 2.0 * k.g1 / (k.mu * k.mu * 0.25) * (400f64).ln();
        assert_eq!(cfg.inner_iters, expect.ceil() as usize);
        let tiny = theorem_schedule(0.1, &k, 0.5, 0.01, Theorem::Theorem2, 0).unwrap();
        assert_eq!(tiny.inner_iters, 1);
    }
}
