//! Concave utilities over return vectors.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{SOFTMAX_SCORE_BOUND, SOFTMAX_SCORE_SMOOTHNESS};

/// What AlphaFair does with a return component below its floor `δ`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FloorPolicy {
    /// Evaluate at `max(J_m, δ)`.
    #[default]
    Clamp,
    /// Refuse any `J_m < δ`.
    Reject,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    /// `Σ_m J_m^{1−α} / (1−α)` on `J_m ≥ δ`.
    AlphaFair {
        alpha: f64,
        delta: f64,
        #[serde(default)]
        floor: FloorPolicy,
    },
    /// `Σ_m w_m J_m`.
    WeightedSum { weights: Vec<f64> },
    /// `Σ_m −(κ/2) max(J_m − c_m, 0)²`: concave with Lipschitz but kinked gradient.
    KinkedQuadratic { kinks: Vec<f64>, kappa: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scalarization {
    pub family: Family,
    pub n_objectives: usize,
}

impl Scalarization {
    pub fn alpha_fair(n_objectives: usize, alpha: f64, delta: f64) -> Result<Self> {
        Self::new(Family::AlphaFair { alpha, delta, floor: FloorPolicy::Clamp }, n_objectives)
    }

    pub fn weighted_sum(weights: Vec<f64>) -> Result<Self> {
        let n = weights.len();
        Self::new(Family::WeightedSum { weights }, n)
    }

    pub fn kinked_quadratic(kinks: Vec<f64>, kappa: f64) -> Result<Self> {
        let n = kinks.len();
        Self::new(Family::KinkedQuadratic { kinks, kappa }, n)
    }

    pub fn new(family: Family, n_objectives: usize) -> Result<Self> {
        if n_objectives == 0 {
            return Err(Error::config("scalarization needs at least one objective"));
        }
        match &family {
            Family::AlphaFair { alpha, delta, .. } => {
                if !(alpha.is_finite() && *alpha > 0.0) || *alpha == 1.0 {
                    return Err(Error::config(format!("alpha must be positive and not 1, got {alpha}")));
                }
                if !(delta.is_finite() && *delta > 0.0) {
                    return Err(Error::config(format!("alpha-fair floor delta must be positive, got {delta}")));
                }
            }
            Family::WeightedSum { weights } => {
                if weights.len() != n_objectives {
                    return Err(Error::config("weights length must equal the number of objectives"));
                }
                if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                    return Err(Error::config("weights must be finite and nonnegative"));
                }
            }
            Family::KinkedQuadratic { kinks, kappa } => {
                if kinks.len() != n_objectives {
                    return Err(Error::config("kinks length must equal the number of objectives"));
                }
                if kinks.iter().any(|c| !c.is_finite()) {
                    return Err(Error::config("kinks must be finite"));
                }
                if !(kappa.is_finite() && *kappa > 0.0) {
                    return Err(Error::config(format!("kappa must be positive, got {kappa}")));
                }
            }
        }
        Ok(Self { family, n_objectives })
    }

    pub fn kind(&self) -> &'static str {
        match self.family {
            Family::AlphaFair { .. } => "alpha_fair",
            Family::WeightedSum { .. } => "weighted_sum",
            Family::KinkedQuadratic { .. } => "kinked_quadratic",
        }
    }

    /// Lower edge of the domain box: `δ` for AlphaFair, 0 otherwise.
    pub fn domain_floor(&self) -> f64 {
        match self.family {
            Family::AlphaFair { delta, .. } => delta,
            _ => 0.0,
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self.family, Family::WeightedSum { .. })
    }

    fn check(&self, j: &[f64]) -> Result<()> {
        if j.len() != self.n_objectives {
            return Err(Error::config(format!(
                "return vector has {} components, scalarization expects {}",
                j.len(),
                self.n_objectives
            )));
        }
        if let Some(m) = j.iter().position(|x| !x.is_finite()) {
            return Err(Error::Domain(format!("return component {m} is not finite")));
        }
        if let Family::AlphaFair { delta, floor: FloorPolicy::Reject, .. } = self.family {
            if let Some(m) = j.iter().position(|&x| x < delta) {
                return Err(Error::Domain(format!("return component {m} = {} is below the floor {delta}", j[m])));
            }
        }
        Ok(())
    }

    pub fn value(&self, j: &[f64]) -> Result<f64> {
        self.check(j)?;
        Ok(match &self.family {
            Family::AlphaFair { alpha, delta, .. } => {
                j.iter().map(|&x| x.max(*delta).powf(1.0 - alpha) / (1.0 - alpha)).sum()
            }
            Family::WeightedSum { weights } => weights.iter().zip(j).map(|(w, x)| w * x).sum(),
            Family::KinkedQuadratic { kinks, kappa } => kinks
                .iter()
                .zip(j)
                .map(|(c, x)| {
                    let e = (x - c).max(0.0);
                    -0.5 * kappa * e * e
                })
                .sum(),
        })
    }

    /// Partial derivatives `∂_m f(J)`.
    pub fn grad(&self, j: &[f64]) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.n_objectives);
        self.grad_into(j, out.as_mut_slice())?;
        Ok(out)
    }

    pub(crate) fn grad_into(&self, j: &[f64], out: &mut [f64]) -> Result<()> {
        self.check(j)?;
        match &self.family {
            Family::AlphaFair { alpha, delta, .. } => {
                for (o, &x) in out.iter_mut().zip(j) {
                    *o = x.max(*delta).powf(-alpha);
                }
            }
            Family::WeightedSum { weights } => out.copy_from_slice(weights),
            Family::KinkedQuadratic { kinks, kappa } => {
                for ((o, &x), c) in out.iter_mut().zip(j).zip(kinks) {
                    *o = -kappa * (x - c).max(0.0);
                }
            }
        }
        Ok(())
    }

    /// Smoothness constants on the box `[δ_eff, 1/(1−γ)]^M`.
    pub fn constants(&self, gamma: f64, class: PolicyClassConstants) -> Result<TheoryConstants> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::config(format!("gamma {gamma} outside (0,1)")));
        }
        let top = 1.0 / (1.0 - gamma);
        let (c, l_f, l_2f) = match &self.family {
            Family::AlphaFair { alpha, delta, .. } => {
                // x^-α is decreasing with decreasing slope magnitude, so every sup sits at x = δ
                let c = delta.powf(-alpha);
                let l_f = alpha * delta.powf(-alpha - 1.0);
                let l_2f = alpha * (alpha + 1.0) * delta.powf(-alpha - 2.0);
                (c, l_f, Some(l_2f))
            }
            Family::WeightedSum { weights } => (weights.iter().copied().fold(0.0, f64::max), 0.0, Some(0.0)),
            Family::KinkedQuadratic { kinks, kappa } => {
                let c = kinks.iter().map(|k| kappa * (top - k).max(0.0)).fold(0.0, f64::max);
                (c, *kappa, None)
            }
        };
        let m = self.n_objectives as f64;
        let l_j = m * c * class.g2 / (1.0 - gamma).powi(2);
        Ok(TheoryConstants { c, l_f, l_2f, g1: class.g1, g2: class.g2, l_j, mu: class.mu, n_objectives: self.n_objectives })
    }
}

/// Score-function constants of a policy class plus a Fisher floor estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyClassConstants {
    pub g1: f64,
    pub g2: f64,
    pub mu: f64,
}

impl PolicyClassConstants {
    pub fn softmax_tabular(mu: f64) -> Self {
        Self { g1: SOFTMAX_SCORE_BOUND, g2: SOFTMAX_SCORE_SMOOTHNESS, mu }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    /// Uniform bound on `|∂_m f|`.
    pub c: f64,
    /// Lipschitz constant of each `∂_m f`.
    pub l_f: f64,
    /// Smoothness of `∂_m f`; absent when `∂_m f` is not differentiable.
    pub l_2f: Option<f64>,
    pub g1: f64,
    pub g2: f64,
    /// `M · C · G_2 / (1 − γ)²`.
    pub l_j: f64,
    pub mu: f64,
    pub n_objectives: usize,
}

/// Configuration block as it appears in run configs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalarizationConfig {
    pub family: String,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    #[serde(default)]
    pub kinks: Option<Vec<f64>>,
    #[serde(default)]
    pub kappa: Option<f64>,
    #[serde(default)]
    pub floor: Option<FloorPolicy>,
}

impl ScalarizationConfig {
    /// AlphaFair floor used when a config omits `delta`.
    pub fn default_delta(gamma: f64) -> f64 {
        0.05 / (1.0 - gamma)
    }

    pub fn build(&self, n_objectives: usize, gamma: f64) -> Result<Scalarization> {
        let need = |v: Option<f64>, name: &str| v.ok_or_else(|| Error::config(format!("scalarization: missing `{name}`")));
        let family = match self.family.as_str() {
            "alpha_fair" => Family::AlphaFair {
                alpha: need(self.alpha, "alpha")?,
                delta: self.delta.unwrap_or_else(|| Self::default_delta(gamma)),
                floor: self.floor.unwrap_or_default(),
            },
            "weighted_sum" => Family::WeightedSum {
                weights: self.weights.clone().ok_or_else(|| Error::config("scalarization: missing `weights`"))?,
            },
            "kinked_quadratic" => Family::KinkedQuadratic {
                kinks: self.kinks.clone().ok_or_else(|| Error::config("scalarization: missing `kinks`"))?,
                kappa: need(self.kappa, "kappa")?,
            },
            other => return Err(Error::config(format!("unknown scalarization family `{other}`"))),
        };
        Scalarization::new(family, n_objectives)
    }
}
