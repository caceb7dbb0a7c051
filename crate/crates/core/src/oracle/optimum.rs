//! Grid-search reference optimum over the policy simplex.

use serde::{Deserialize, Serialize};

use super::returns_from_table;
use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::scalarization::Scalarization;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceOptimum {
    pub f_star: f64,
    /// Maximizing action probabilities, `[s][a]` flat.
    pub probs: Vec<f64>,
    pub j_star: Vec<f64>,
    pub description: String,
}

const REFINE_TOL: f64 = 1e-9;

/// `f(J^{π*})` over stationary stochastic policies, by exhaustive grid.
///
/// Supported shapes: one state with two or three actions, or two states
/// with two actions (a simplex of dimension at most two).
pub fn reference_optimum(mdp: &TabularMdp, f: &Scalarization, grid_resolution: usize) -> Result<ReferenceOptimum> {
    if grid_resolution < 1000 {
        return Err(Error::config("grid_resolution must be at least 1000"));
    }
    let eval = |table: &[f64]| -> Result<f64> { f.value(returns_from_table(mdp, table)?.as_slice()) };
    let (probs, f_star) = match (mdp.n_states, mdp.n_actions) {
        (1, 2) => {
            let g = |p: f64| eval(&[p, 1.0 - p]);
            let (p, v) = line_search(&g, grid_resolution)?;
            (vec![p, 1.0 - p], v)
        }
        (1, 3) => {
            let g = |x: f64, y: f64| eval(&[x, y, 1.0 - x - y]);
            let (x, y, v) = plane_search(&g, grid_resolution, true)?;
            (vec![x, y, (1.0 - x - y).max(0.0)], v)
        }
        (2, 2) => {
            let g = |x: f64, y: f64| eval(&[x, 1.0 - x, y, 1.0 - y]);
            let (x, y, v) = plane_search(&g, grid_resolution, false)?;
            (vec![x, 1.0 - x, y, 1.0 - y], v)
        }
        (s, a) => {
            return Err(Error::Unsupported(format!(
                "reference optimum supports 1x2, 1x3 and 2x2 MDPs, got {s}x{a}"
            )))
        }
    };
    let j_star = returns_from_table(mdp, &probs)?;
    let description = probs
        .chunks(mdp.n_actions)
        .enumerate()
        .map(|(s, row)| format!("s{s}: [{}]", row.iter().map(|p| format!("{p:.6}")).collect::<Vec<_>>().join(", ")))
        .collect::<Vec<_>>()
        .join("; ");
    Ok(ReferenceOptimum { f_star, probs, j_star: j_star.iter().copied().collect(), description })
}

/// Grid over `[0, 1]`, then ternary search on the bracket around the best point.
fn line_search(g: &dyn Fn(f64) -> Result<f64>, n: usize) -> Result<(f64, f64)> {
    let mut best = (0.0, f64::NEG_INFINITY);
    for i in 0..=n {
        let p = i as f64 / n as f64;
        let v = g(p)?;
        if v > best.1 {
            best = (p, v);
        }
    }
    let h = 1.0 / n as f64;
    let (mut lo, mut hi) = ((best.0 - h).max(0.0), (best.0 + h).min(1.0));
    while hi - lo > REFINE_TOL {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if g(m1)? < g(m2)? {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    let p = 0.5 * (lo + hi);
    let v = g(p)?;
    Ok(if v >= best.1 { (p, v) } else { best })
}

/// Grid over the unit square (or the triangle `x + y ≤ 1`), then repeated
/// local zooms around the incumbent.
fn plane_search(g: &dyn Fn(f64, f64) -> Result<f64>, n: usize, simplex: bool) -> Result<(f64, f64, f64)> {
    let inside = |x: f64, y: f64| (0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y) && (!simplex || x + y <= 1.0 + 1e-15);
    let mut best = (0.0, 0.0, f64::NEG_INFINITY);
    for i in 0..=n {
        for k in 0..=n {
            let (x, y) = (i as f64 / n as f64, k as f64 / n as f64);
            if !inside(x, y) {
                continue;
            }
            let v = g(x, y)?;
            if v > best.2 {
                best = (x, y, v);
            }
        }
    }
    let mut h = 1.0 / n as f64;
    let zoom = 20;
    while h > REFINE_TOL {
        let (cx, cy) = (best.0, best.1);
        for i in 0..=2 * zoom {
            for k in 0..=2 * zoom {
                let x = cx + h * (i as f64 - zoom as f64) / zoom as f64;
                let y = cy + h * (k as f64 - zoom as f64) / zoom as f64;
                if !inside(x, y) {
                    continue;
                }
                let v = g(x, y)?;
                if v > best.2 {
                    best = (x, y, v);
                }
            }
        }
        h /= 4.0;
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::suite;

    #[test]
    fn symmetric_alpha_fair_is_even_mix() {
        let mdp = suite::symmetric_bandit(0.9);
        let f = Scalarization::alpha_fair(2, 2.0, 0.05).unwrap();
        let opt = reference_optimum(&mdp, &f, 1000).unwrap();
        assert!((opt.probs[0] - 0.5).abs() < 1e-6);
        assert!((opt.f_star + 0.4).abs() < 1e-12);
    }

    #[test]
    fn linear_objective_picks_vertex() {
        let mdp = suite::symmetric_bandit(0.9);
        let f = Scalarization::weighted_sum(vec![1.0, 0.0]).unwrap();
        let opt = reference_optimum(&mdp, &f, 1000).unwrap();
        assert_eq!(opt.probs[0], 1.0);
        assert!((opt.f_star - 10.0).abs() < 1e-12);
    }

    #[test]
    fn asymmetric_optimum_is_stationary() {
        let mdp = suite::asymmetric_bandit(0.9);
        let f = Scalarization::alpha_fair(2, 2.0, 0.05).unwrap();
        let opt = reference_optimum(&mdp, &f, 1000).unwrap();
        // closed form: maximize -1/(10(0.1+0.9p)) - 1/(10(0.9-0.7p))
        // stationarity: 0.9/(0.1+0.9p)^2 = 0.7/(0.9-0.7p)^2
        let p = opt.probs[0];
        let lhs = 0.9 / (0.1 + 0.9 * p).powi(2);
        let rhs = 0.7 / (0.9 - 0.7 * p).powi(2);
        assert!((lhs - rhs).abs() < 1e-6, "p = {p}");
    }

    #[test]
    fn two_state_search_beats_every_coarse_policy() {
        let mdp = suite::chain(0.9);
        let f = Scalarization::alpha_fair(2, 2.0, 0.05).unwrap();
        let opt = reference_optimum(&mdp, &f, 1000).unwrap();
        for i in 0..=20 {
            for k in 0..=20 {
                let (x, y) = (i as f64 / 20.0, k as f64 / 20.0);
                let j = returns_from_table(&mdp, &[x, 1.0 - x, y, 1.0 - y]).unwrap();
                assert!(f.value(j.as_slice()).unwrap() <= opt.f_star + 1e-12);
            }
        }
    }

    #[test]
    fn unsupported_shapes_are_refused() {
        let mdp = TabularMdp::new(3, 1, 1, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], vec![0.0; 3], 0.9, vec![1.0, 0.0, 0.0])
            .unwrap();
        let f = Scalarization::weighted_sum(vec![1.0]).unwrap();
        assert!(matches!(reference_optimum(&mdp, &f, 1000), Err(Error::Unsupported(_))));
        assert!(reference_optimum(&suite::symmetric_bandit(0.9), &f, 10).is_err());
    }
}
