//! Lane-addressed random streams.
//!
//! Every random draw in a run is taken from a stream keyed by
//! `(master_seed, lane)`. The key is fed verbatim into a ChaCha seed, so
//! distinct lanes give distinct keys and the sequence drawn from a lane
//! never depends on which thread consumes it or in what order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// What a stream is used for within one outer iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    /// The `B1` trajectories behind the empirical return estimate.
    ReturnBatch,
    /// The geometric level draw of the MLMC estimator.
    MlmcLevel,
    /// Trajectories consumed by the MLMC partials.
    MlmcBatch,
    /// Trajectories of inner step `n`.
    Inner(u32),
    /// Free-standing sampling (CLI `simulate`, Monte Carlo campaigns).
    Campaign(u32),
}

impl Phase {
    fn encode(self) -> u64 {
        let (tag, sub) = match self {
            Phase::ReturnBatch => (0u64, 0u32),
            Phase::MlmcLevel => (1, 0),
            Phase::MlmcBatch => (2, 0),
            Phase::Inner(n) => (3, n),
            Phase::Campaign(n) => (4, n),
        };
        (tag << 32) | u64::from(sub)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Lane {
    pub outer: u64,
    pub phase: Phase,
    pub index: u64,
}

impl Lane {
    pub fn new(outer: u64, phase: Phase, index: u64) -> Self {
        Self { outer, phase, index }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    pub master_seed: u64,
    pub lane: Lane,
}

impl RngStream {
    pub fn new(master_seed: u64, lane: Lane) -> Self {
        Self { master_seed, lane }
    }

    /// Same seed, different lane.
    pub fn with_lane(&self, lane: Lane) -> Self {
        Self { master_seed: self.master_seed, lane }
    }

    pub fn rng(&self) -> LaneRng {
        let mut seed = [0u8; 32];
        seed[0..8].copy_from_slice(&self.master_seed.to_le_bytes());
        seed[8..16].copy_from_slice(&self.lane.outer.to_le_bytes());
        seed[16..24].copy_from_slice(&self.lane.phase.encode().to_le_bytes());
        seed[24..32].copy_from_slice(&self.lane.index.to_le_bytes());
        LaneRng(ChaCha12Rng::from_seed(seed))
    }
}

/// A family of lanes sharing `(master_seed, outer, phase)`; trajectory `i`
/// of a batch is drawn from lane index `i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LaneBlock {
    pub master_seed: u64,
    pub outer: u64,
    pub phase: Phase,
}

impl LaneBlock {
    pub fn new(master_seed: u64, outer: u64, phase: Phase) -> Self {
        Self { master_seed, outer, phase }
    }

    pub fn stream(&self, index: u64) -> RngStream {
        RngStream::new(self.master_seed, Lane::new(self.outer, self.phase, index))
    }
}

/// The generator behind a lane.
pub struct LaneRng(ChaCha12Rng);

impl LaneRng {
    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        self.0.gen::<f64>()
    }

    /// Index drawn from `probs` by cumulative-sum inversion.
    ///
    /// A draw landing exactly on a boundary goes to the right-hand
    /// category; zero-mass categories are never returned.
    pub fn categorical(&mut self, probs: &[f64]) -> usize {
        categorical_inverse(probs, self.uniform())
    }

    /// `Q ~ Geom(1/2)` on `{1, 2, ...}`, i.e. `Pr(Q = q) = 2^-q`.
    pub fn geometric_half(&mut self) -> u32 {
        // each uniform bit is a fair coin; the level is the index of the first head
        let mut q = 1;
        loop {
            let bits = self.0.gen::<u64>();
            if bits != 0 {
                return q + bits.trailing_zeros();
            }
            q += 64;
        }
    }
}

pub(crate) fn categorical_inverse(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        last_positive = i;
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left the cumulative sum just below one
    last_positive
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lane_replay_is_identical() {
        let s = RngStream::new(7, Lane::new(3, Phase::Inner(2), 11));
        let a: Vec<f64> = {
            let mut r = s.rng();
            (0..16).map(|_| r.uniform()).collect()
        };
        let b: Vec<f64> = {
            let mut r = s.rng();
            (0..16).map(|_| r.uniform()).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn distinct_lanes_differ() {
        let a = RngStream::new(7, Lane::new(0, Phase::Inner(1), 0)).rng().uniform();
        let b = RngStream::new(7, Lane::new(0, Phase::Inner(0), 1)).rng().uniform();
        let c = RngStream::new(7, Lane::new(0, Phase::ReturnBatch, 0)).rng().uniform();
        assert_ne!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn categorical_boundaries_go_right() {
        let p = [0.25, 0.25, 0.5];
        assert_eq!(categorical_inverse(&p, 0.0), 0);
        assert_eq!(categorical_inverse(&p, 0.25), 1);
        assert_eq!(categorical_inverse(&p, 0.5), 2);
        assert_eq!(categorical_inverse(&[0.0, 1.0], 0.0), 1);
        assert_eq!(categorical_inverse(&[0.5, 0.5, 0.0], 0.999_999_999_999_999_9), 1);
    }

    #[test]
    fn geometric_level_frequencies() {
        let n = 200_000;
        let mut counts = [0usize; 4];
        for i in 0..n {
            let q = RngStream::new(1, Lane::new(0, Phase::MlmcLevel, i)).rng().geometric_half();
            assert!(q >= 1);
            if q <= 4 {
                counts[q as usize - 1] += 1;
            }
        }
        for (k, &c) in counts.iter().enumerate() {
            let p = 0.5f64.powi(k as i32 + 1);
            let sd = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((c as f64 - n as f64 * p).abs() < 4.0 * sd, "level {} count {}", k + 1, c);
        }
    }
}
