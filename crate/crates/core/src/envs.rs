//! Reward environments supported on `[0, 1]`.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::klmath::{mu_dot, ProbValue};
use crate::rng::TrialStreams;

const SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("instance has no arms")]
    NoArms,
    #[error("arm index {arm} out of range for {n_arms} arms")]
    ArmIndex { arm: usize, n_arms: usize },
    #[error("arm {arm}: {reason}")]
    Distribution { arm: usize, reason: String },
    #[error("reward must lie in [0, 1], got {0}")]
    Reward(f64),
}

/// Reward distribution of a single arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ArmDistribution {
    Bernoulli {
        mean: f64,
    },
    /// Finite support: `points` are `(value, probability)` pairs.
    DiscreteSupport {
        points: Vec<(f64, f64)>,
    },
    /// `low + (high - low) * Beta(a, b)`.
    ScaledBeta {
        a: f64,
        b: f64,
        #[serde(default)]
        low: f64,
        #[serde(default = "one")]
        high: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl ArmDistribution {
    pub fn validate(&self) -> Result<(), String> {
        let in_unit = |x: f64| (0.0..=1.0).contains(&x);
        match self {
            ArmDistribution::Bernoulli { mean } => {
                if !in_unit(*mean) {
                    return Err(format!("bernoulli mean {mean} outside [0, 1]"));
                }
            }
            ArmDistribution::DiscreteSupport { points } => {
                if points.is_empty() {
                    return Err("discrete support is empty".into());
                }
                let mut total = 0.0;
                for &(v, p) in points {
                    if !in_unit(v) {
                        return Err(format!("support value {v} outside [0, 1]"));
                    }
                    if !(p >= 0.0 && p.is_finite()) {
                        return Err(format!("support probability {p} is negative"));
                    }
                    total += p;
                }
                if (total - 1.0).abs() > SUM_TOL {
                    return Err(format!("support probabilities sum to {total}, not 1"));
                }
            }
            ArmDistribution::ScaledBeta { a, b, low, high } => {
                if !(*a > 0.0 && a.is_finite() && *b > 0.0 && b.is_finite()) {
                    return Err(format!("beta shape parameters ({a}, {b}) must be positive"));
                }
                if !(in_unit(*low) && in_unit(*high) && low <= high) {
                    return Err(format!("beta range [{low}, {high}] must lie inside [0, 1]"));
                }
            }
        }
        Ok(())
    }

    /// Analytic mean.
    pub fn mean(&self) -> f64 {
        match self {
            ArmDistribution::Bernoulli { mean } => *mean,
            ArmDistribution::DiscreteSupport { points } => points
                .iter()
                .map(|&(v, p)| v * p)
                .sum::<f64>()
                .clamp(0.0, 1.0),
            ArmDistribution::ScaledBeta { a, b, low, high } => low + (high - low) * a / (a + b),
        }
    }

    pub fn is_bernoulli(&self) -> bool {
        matches!(self, ArmDistribution::Bernoulli { .. })
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            ArmDistribution::Bernoulli { mean } => {
                if rng.random::<f64>() < *mean {
                    1.0
                } else {
                    0.0
                }
            }
            ArmDistribution::DiscreteSupport { points } => {
                let u = rng.random::<f64>();
                let mut acc = 0.0;
                for &(v, p) in points {
                    acc += p;
                    if u < acc {
                        return v;
                    }
                }
                // rounding left u above the cumulative sum
                points
                    .iter()
                    .rev()
                    .find(|(_, p)| *p > 0.0)
                    .map(|&(v, _)| v)
                    .unwrap_or(points[0].0)
            }
            ArmDistribution::ScaledBeta { a, b, low, high } => {
                let beta = Beta::new(*a, *b).expect("validated shape parameters");
                let x: f64 = beta.sample(rng);
                (low + (high - low) * x).clamp(0.0, 1.0)
            }
        }
    }
}

/// Derived quantities of an instance.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceSummary {
    pub mu_star: f64,
    pub gaps: Vec<f64>,
    pub mu_dot_star: f64,
    /// Value of the uniform target policy.
    pub mean_of_means: f64,
}

/// An immutable set of arms, optionally behind the binarization wrapper.
#[derive(Debug, Clone, PartialEq)]
pub struct BanditInstance {
    arms: Vec<ArmDistribution>,
    means: Vec<f64>,
    binarize: bool,
}

impl BanditInstance {
    pub fn new(arms: Vec<ArmDistribution>) -> Result<Self, EnvError> {
        if arms.is_empty() {
            return Err(EnvError::NoArms);
        }
        for (arm, d) in arms.iter().enumerate() {
            d.validate()
                .map_err(|reason| EnvError::Distribution { arm, reason })?;
        }
        let means = arms.iter().map(ArmDistribution::mean).collect();
        Ok(BanditInstance {
            arms,
            means,
            binarize: false,
        })
    }

    pub fn bernoulli(means: &[f64]) -> Result<Self, EnvError> {
        Self::new(
            means
                .iter()
                .map(|&mean| ArmDistribution::Bernoulli { mean })
                .collect(),
        )
    }

    /// Wraps the instance so that every observed reward `r` is replaced by a
    /// Bernoulli(`r`) draw. Arm means are unchanged.
    pub fn binarized(mut self) -> Self {
        self.binarize = true;
        self
    }

    pub fn is_binarized(&self) -> bool {
        self.binarize
    }

    pub fn n_arms(&self) -> usize {
        self.arms.len()
    }

    pub fn arms(&self) -> &[ArmDistribution] {
        &self.arms
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    /// True when every observed reward is in `{0, 1}`.
    pub fn has_binary_rewards(&self) -> bool {
        self.binarize || self.arms.iter().all(ArmDistribution::is_bernoulli)
    }

    pub fn mu_star(&self) -> f64 {
        self.means.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn gaps(&self) -> Vec<f64> {
        let best = self.mu_star();
        self.means.iter().map(|m| best - m).collect()
    }

    pub fn max_gap(&self) -> f64 {
        self.gaps().into_iter().fold(0.0, f64::max)
    }

    pub fn summary(&self) -> InstanceSummary {
        instance_summary(self)
    }

    /// Draws a reward for `arm` and applies binarization when wrapped.
    pub fn observe(&self, arm: usize, streams: &mut TrialStreams) -> Result<f64, EnvError> {
        let raw = sample_reward(self, arm, &mut streams.rewards[arm])?;
        if self.binarize {
            binarize(raw, &mut streams.binarize)
        } else {
            Ok(raw)
        }
    }
}

/// One i.i.d. draw from the (unwrapped) distribution of `arm`.
pub fn sample_reward<R: Rng + ?Sized>(
    instance: &BanditInstance,
    arm: usize,
    rng: &mut R,
) -> Result<f64, EnvError> {
    let dist = instance.arms.get(arm).ok_or(EnvError::ArmIndex {
        arm,
        n_arms: instance.n_arms(),
    })?;
    Ok(dist.sample(rng))
}

/// Returns 1 with probability `reward`, else 0.
pub fn binarize<R: Rng + ?Sized>(reward: f64, rng: &mut R) -> Result<f64, EnvError> {
    if !(0.0..=1.0).contains(&reward) {
        return Err(EnvError::Reward(reward));
    }
    Ok(if rng.random::<f64>() < reward {
        1.0
    } else {
        0.0
    })
}

pub fn instance_summary(instance: &BanditInstance) -> InstanceSummary {
    let mu_star = instance.mu_star();
    let k = instance.n_arms() as f64;
    InstanceSummary {
        mu_star,
        gaps: instance.gaps(),
        mu_dot_star: mu_dot(ProbValue::saturating(mu_star)),
        mean_of_means: instance.means.iter().sum::<f64>() / k,
    }
}
