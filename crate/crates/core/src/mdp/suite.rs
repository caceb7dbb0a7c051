//! Small MDPs used by tests, benchmarks and the CLI defaults.

use super::TabularMdp;

/// One state, two arms, `r(a0) = (1, 0)`, `r(a1) = (0, 1)`.
pub fn symmetric_bandit(gamma: f64) -> TabularMdp {
    bandit(gamma, [1.0, 0.0], [0.0, 1.0])
}

/// One state, two arms, `r(a0) = (1, 0.2)`, `r(a1) = (0.1, 0.9)`.
pub fn asymmetric_bandit(gamma: f64) -> TabularMdp {
    bandit(gamma, [1.0, 0.2], [0.1, 0.9])
}

/// Two-armed, two-objective bandit with the given per-arm reward vectors.
pub fn bandit(gamma: f64, arm0: [f64; 2], arm1: [f64; 2]) -> TabularMdp {
    TabularMdp::new(
        1,
        2,
        2,
        vec![1.0, 1.0],
        vec![arm0[0], arm1[0], arm0[1], arm1[1]],
        gamma,
        vec![1.0],
    )
    .expect("bandit is valid")
}

/// Two states, two actions, two objectives, stochastic transitions.
pub fn chain(gamma: f64) -> TabularMdp {
    #[rustfmt::skip]
    let transitions = vec![
        0.9, 0.1,   0.2, 0.8,
        0.7, 0.3,   0.1, 0.9,
    ];
    #[rustfmt::skip]
    let rewards = vec![
        1.0, 0.2,   0.0, 0.5,
        0.1, 0.4,   0.8, 1.0,
    ];
    TabularMdp::new(2, 2, 2, transitions, rewards, gamma, vec![0.6, 0.4]).expect("chain is valid")
}

/// Two states with deterministic transitions: `a0` stays, `a1` switches.
pub fn deterministic_chain(gamma: f64) -> TabularMdp {
    #[rustfmt::skip]
    let transitions = vec![
        1.0, 0.0,   0.0, 1.0,
        0.0, 1.0,   1.0, 0.0,
    ];
    #[rustfmt::skip]
    let rewards = vec![
        1.0, 0.3,   0.0, 0.6,
        0.2, 0.5,   1.0, 0.4,
    ];
    TabularMdp::new(2, 2, 2, transitions, rewards, gamma, vec![1.0, 0.0]).expect("deterministic chain is valid")
}

/// One state, one action, constant reward in every objective.
pub fn constant(gamma: f64, n_objectives: usize, reward: f64) -> TabularMdp {
    TabularMdp::new(1, 1, n_objectives, vec![1.0], vec![reward; n_objectives], gamma, vec![1.0])
        .expect("constant mdp is valid")
}

/// Looks a suite member up by name.
pub fn by_name(name: &str, gamma: f64) -> Option<TabularMdp> {
    Some(match name {
        "symmetric_bandit" => symmetric_bandit(gamma),
        "asymmetric_bandit" => asymmetric_bandit(gamma),
        "chain" => chain(gamma),
        "deterministic_chain" => deterministic_chain(gamma),
        _ => return None,
    })
}
