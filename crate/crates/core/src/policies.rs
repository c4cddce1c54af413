//! Bandit policies behind one decision contract.
//!
//! Every call to [`policy_step`] returns the chosen arm together with the
//! probability with which it was chosen. KL-MS, MS and Uniform report exact
//! probabilities (and the full distribution), Bernoulli Thompson sampling
//! reports a Monte-Carlo estimate, and KL-UCB, being deterministic, reports 1.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::klmath::{kl_raw, upper_inverse_raw, DEFAULT_INVERSE_TOL};
use crate::rng::TrialStreams;

/// Sub-Gaussian variance proxy of any `[0, 1]` reward.
pub const BOUNDED_SIGMA_SQ: f64 = 0.25;

/// Parameters of the Beta prior used by Bernoulli Thompson sampling.
pub const TS_PRIOR: (f64, f64) = (0.5, 0.5);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("no arms")]
    NoArms,
    #[error("arm {0} has not been pulled yet")]
    UnpulledArm(usize),
    #[error("round {t} is inside the forced round-robin phase of {n_arms} arms")]
    ForcedPhase { t: u64, n_arms: usize },
    #[error("round index must start at 1")]
    ZeroRound,
    #[error("arm index {arm} out of range for {n_arms} arms")]
    ArmIndex { arm: usize, n_arms: usize },
    #[error("reward must lie in [0, 1], got {0}")]
    Reward(f64),
    #[error("invalid policy configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    KlMs,
    Ms,
    BernoulliTs,
    KlUcb,
    Uniform,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::KlMs => "kl-ms",
            PolicyKind::Ms => "ms",
            PolicyKind::BernoulliTs => "bernoulli-ts",
            PolicyKind::KlUcb => "kl-ucb",
            PolicyKind::Uniform => "uniform",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn default_sigma_sq() -> f64 {
    BOUNDED_SIGMA_SQ
}

fn default_tol() -> f64 {
    DEFAULT_INVERSE_TOL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    /// MS variance proxy.
    #[serde(default = "default_sigma_sq")]
    pub sigma_sq: f64,
    /// Monte-Carlo samples for Thompson sampling propensities. Without it
    /// Thompson sampling logs no propensity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc_samples: Option<u32>,
    /// Report `(count + 1) / (M + K)` instead of `count / M`.
    #[serde(default)]
    pub mc_smoothing: bool,
    /// Bisection tolerance of the KL-UCB index.
    #[serde(default = "default_tol")]
    pub klucb_tol: f64,
    /// Extra seed material folded into every trial seed.
    #[serde(default)]
    pub stream: u64,
}

impl PolicyConfig {
    pub fn new(kind: PolicyKind) -> Self {
        PolicyConfig {
            kind,
            sigma_sq: BOUNDED_SIGMA_SQ,
            mc_samples: None,
            mc_smoothing: false,
            klucb_tol: DEFAULT_INVERSE_TOL,
            stream: 0,
        }
    }

    pub fn kl_ms() -> Self {
        Self::new(PolicyKind::KlMs)
    }

    pub fn ms(sigma_sq: f64) -> Self {
        PolicyConfig {
            sigma_sq,
            ..Self::new(PolicyKind::Ms)
        }
    }

    pub fn bernoulli_ts(mc_samples: Option<u32>) -> Self {
        PolicyConfig {
            mc_samples,
            ..Self::new(PolicyKind::BernoulliTs)
        }
    }

    pub fn kl_ucb() -> Self {
        Self::new(PolicyKind::KlUcb)
    }

    pub fn uniform() -> Self {
        Self::new(PolicyKind::Uniform)
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(self.sigma_sq > 0.0 && self.sigma_sq.is_finite()) {
            return Err(PolicyError::Config(format!(
                "sigma_sq must be positive, got {}",
                self.sigma_sq
            )));
        }
        if self.mc_samples == Some(0) {
            return Err(PolicyError::Config("mc_samples must be at least 1".into()));
        }
        if !(self.klucb_tol > 0.0 && self.klucb_tol.is_finite()) {
            return Err(PolicyError::Config(format!(
                "klucb_tol must be positive, got {}",
                self.klucb_tol
            )));
        }
        Ok(())
    }

    /// Short label used in CSV output, e.g. `bernoulli-ts` or `ms`.
    pub fn label(&self) -> String {
        self.kind.name().to_string()
    }
}

/// Per-arm sufficient statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmStats {
    pub pulls: u64,
    pub reward_sum: f64,
    /// Running mean `reward_sum / pulls`; zero before the first pull.
    pub mean: f64,
    /// Beta posterior used by Thompson sampling.
    pub alpha: f64,
    pub beta: f64,
}

impl Default for ArmStats {
    fn default() -> Self {
        ArmStats {
            pulls: 0,
            reward_sum: 0.0,
            mean: 0.0,
            alpha: TS_PRIOR.0,
            beta: TS_PRIOR.1,
        }
    }
}

impl ArmStats {
    /// Stats with the given count and empirical mean (posterior left at the prior).
    pub fn with_mean(pulls: u64, mean: f64) -> Self {
        ArmStats {
            pulls,
            reward_sum: mean * pulls as f64,
            mean,
            ..Default::default()
        }
    }

    pub fn with_posterior(alpha: f64, beta: f64) -> Self {
        ArmStats {
            alpha,
            beta,
            ..Default::default()
        }
    }

    fn record(&mut self, reward: f64) {
        self.pulls += 1;
        self.reward_sum += reward;
        self.mean = self.reward_sum / self.pulls as f64;
        self.alpha += reward;
        self.beta += 1.0 - reward;
    }
}

/// Mutable state of one policy instance.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PolicyState {
    pub stats: Vec<ArmStats>,
}

impl PolicyState {
    pub fn new(n_arms: usize) -> Self {
        PolicyState {
            stats: vec![ArmStats::default(); n_arms],
        }
    }

    pub fn n_arms(&self) -> usize {
        self.stats.len()
    }
}

/// Probability attached to a logged action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Propensity {
    Exact(f64),
    /// Monte-Carlo estimate; may be exactly zero.
    Estimated(f64),
    /// The policy was not asked to estimate it.
    Unavailable,
}

impl Propensity {
    pub fn value(self) -> Option<f64> {
        match self {
            Propensity::Exact(p) | Propensity::Estimated(p) => Some(p),
            Propensity::Unavailable => None,
        }
    }

    /// Value for logging; `NaN` when unavailable.
    pub fn as_f64(self) -> f64 {
        self.value().unwrap_or(f64::NAN)
    }
}

/// One decision: the arm, its probability, and the full distribution when known.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDraw {
    pub arm: usize,
    pub behavior_prob: Propensity,
    pub distribution: Option<Vec<f64>>,
}

fn check_pulled(stats: &[ArmStats]) -> Result<(), PolicyError> {
    if stats.is_empty() {
        return Err(PolicyError::NoArms);
    }
    match stats.iter().position(|s| s.pulls == 0) {
        Some(a) => Err(PolicyError::UnpulledArm(a)),
        None => Ok(()),
    }
}

/// Largest empirical mean.
pub fn best_mean(stats: &[ArmStats]) -> f64 {
    stats
        .iter()
        .map(|s| s.mean)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Unnormalized KL-MS log-weights `-N_a kl(mean_a, max mean)`.
pub fn klms_log_weights(stats: &[ArmStats]) -> Result<Vec<f64>, PolicyError> {
    check_pulled(stats)?;
    let best = best_mean(stats);
    Ok(stats
        .iter()
        .map(|s| {
            let d = kl_raw(s.mean.clamp(0.0, 1.0), best.clamp(0.0, 1.0));
            if d == 0.0 {
                0.0
            } else {
                -(s.pulls as f64) * d
            }
        })
        .collect())
}

/// Unnormalized MS log-weights `-N_a gap_a^2 / (2 sigma_sq)`.
pub fn ms_log_weights(stats: &[ArmStats], sigma_sq: f64) -> Result<Vec<f64>, PolicyError> {
    check_pulled(stats)?;
    if !(sigma_sq > 0.0 && sigma_sq.is_finite()) {
        return Err(PolicyError::Config(format!(
            "sigma_sq must be positive, got {sigma_sq}"
        )));
    }
    let best = best_mean(stats);
    Ok(stats
        .iter()
        .map(|s| {
            let gap = best - s.mean;
            -(s.pulls as f64) * gap * gap / (2.0 * sigma_sq)
        })
        .collect())
}

/// Softmax of log-weights with max subtraction; `-inf` entries get probability 0.
pub fn normalize_log_weights(log_w: &[f64]) -> Vec<f64> {
    let top = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|&l| (l - top).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// KL Maillard sampling distribution.
pub fn klms_distribution(stats: &[ArmStats]) -> Result<Vec<f64>, PolicyError> {
    Ok(normalize_log_weights(&klms_log_weights(stats)?))
}

/// Maillard sampling distribution with variance proxy `sigma_sq`.
pub fn ms_distribution(stats: &[ArmStats], sigma_sq: f64) -> Result<Vec<f64>, PolicyError> {
    Ok(normalize_log_weights(&ms_log_weights(stats, sigma_sq)?))
}

/// Inverse-CDF draw from `probs`; zero-probability entries are never chosen.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u = rng.random::<f64>();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

/// Index of the maximum, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Beta(alpha, beta) via a ratio of Gamma variates.
#[derive(Debug, Clone, Copy)]
struct BetaSampler {
    x: Gamma<f64>,
    y: Gamma<f64>,
    mean: f64,
}

impl BetaSampler {
    fn new(alpha: f64, beta: f64) -> Self {
        BetaSampler {
            x: Gamma::new(alpha, 1.0).expect("positive posterior shape"),
            y: Gamma::new(beta, 1.0).expect("positive posterior shape"),
            mean: alpha / (alpha + beta),
        }
    }

    #[inline]
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let x = self.x.sample(rng);
        let y = self.y.sample(rng);
        let s = x + y;
        if s > 0.0 {
            x / s
        } else {
            // both variates underflowed
            self.mean
        }
    }
}

fn posterior_samplers(stats: &[ArmStats]) -> Vec<BetaSampler> {
    stats
        .iter()
        .map(|s| BetaSampler::new(s.alpha, s.beta))
        .collect()
}

#[inline]
fn sampled_argmax<R: Rng + ?Sized>(samplers: &[BetaSampler], rng: &mut R) -> usize {
    let mut best = 0;
    let mut best_theta = f64::NEG_INFINITY;
    for (a, s) in samplers.iter().enumerate() {
        let theta = s.sample(rng);
        if theta > best_theta {
            best = a;
            best_theta = theta;
        }
    }
    best
}

/// Thompson sampling action: argmax of one posterior draw per arm.
pub fn ts_act<R: Rng + ?Sized>(stats: &[ArmStats], rng: &mut R) -> usize {
    sampled_argmax(&posterior_samplers(stats), rng)
}

/// How often each arm wins in `m` independent Thompson draws.
pub fn ts_mc_counts<R: Rng + ?Sized>(stats: &[ArmStats], m: u32, rng: &mut R) -> Vec<u32> {
    let samplers = posterior_samplers(stats);
    let mut counts = vec![0u32; stats.len()];
    for _ in 0..m {
        counts[sampled_argmax(&samplers, rng)] += 1;
    }
    counts
}

/// Monte-Carlo estimate of the probability that Thompson sampling picks
/// `target_arm`. Not smoothed: a zero count gives exactly zero.
pub fn ts_mc_action_prob<R: Rng + ?Sized>(
    stats: &[ArmStats],
    target_arm: usize,
    m: u32,
    rng: &mut R,
) -> f64 {
    let counts = ts_mc_counts(stats, m, rng);
    counts[target_arm] as f64 / m as f64
}

/// `ln f(t)` with `f(t) = 1 + t ln^2 t`.
pub fn klucb_log_f(t: u64) -> f64 {
    let t = t as f64;
    let l = t.ln();
    (1.0 + t * l * l).ln()
}

/// KL-UCB upper confidence indices at round `t`.
pub fn klucb_indices(stats: &[ArmStats], t: u64, tol: f64) -> Result<Vec<f64>, PolicyError> {
    check_pulled(stats)?;
    if t <= stats.len() as u64 {
        return Err(PolicyError::ForcedPhase {
            t,
            n_arms: stats.len(),
        });
    }
    let log_f = klucb_log_f(t);
    Ok(stats
        .iter()
        .map(|s| upper_inverse_raw(s.mean.clamp(0.0, 1.0), log_f / s.pulls as f64, tol))
        .collect())
}

pub fn klucb_act(stats: &[ArmStats], t: u64, tol: f64) -> Result<usize, PolicyError> {
    Ok(argmax(&klucb_indices(stats, t, tol)?))
}

fn point_mass(n: usize, arm: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[arm] = 1.0;
    v
}

/// One decision at (1-based) round `t`.
///
/// Rounds `t <= K` pull arm `t - 1` with probability 1. Afterwards the
/// configured rule is applied. Thompson sampling estimates the propensity
/// from the Monte-Carlo stream before drawing the action from the action
/// stream, so the estimate is independent of the draw.
pub fn policy_step(
    config: &PolicyConfig,
    state: &PolicyState,
    t: u64,
    streams: &mut TrialStreams,
) -> Result<ActionDraw, PolicyError> {
    let k = state.n_arms();
    if k == 0 {
        return Err(PolicyError::NoArms);
    }
    if t == 0 {
        return Err(PolicyError::ZeroRound);
    }
    if t <= k as u64 {
        let arm = (t - 1) as usize;
        return Ok(ActionDraw {
            arm,
            behavior_prob: Propensity::Exact(1.0),
            distribution: Some(point_mass(k, arm)),
        });
    }
    let stats = &state.stats;
    let exact = |dist: Vec<f64>, arm: usize| ActionDraw {
        arm,
        behavior_prob: Propensity::Exact(dist[arm]),
        distribution: Some(dist),
    };
    match config.kind {
        PolicyKind::KlMs => {
            let dist = klms_distribution(stats)?;
            let arm = sample_index(&dist, &mut streams.action);
            Ok(exact(dist, arm))
        }
        PolicyKind::Ms => {
            let dist = ms_distribution(stats, config.sigma_sq)?;
            let arm = sample_index(&dist, &mut streams.action);
            Ok(exact(dist, arm))
        }
        PolicyKind::Uniform => {
            let dist = vec![1.0 / k as f64; k];
            let arm = streams.action.random_range(0..k);
            Ok(exact(dist, arm))
        }
        PolicyKind::KlUcb => {
            let arm = klucb_act(stats, t, config.klucb_tol)?;
            Ok(ActionDraw {
                arm,
                behavior_prob: Propensity::Exact(1.0),
                distribution: Some(point_mass(k, arm)),
            })
        }
        PolicyKind::BernoulliTs => {
            let counts = config
                .mc_samples
                .map(|m| (m, ts_mc_counts(stats, m, &mut streams.monte_carlo)));
            let arm = ts_act(stats, &mut streams.action);
            let behavior_prob = match counts {
                Some((m, c)) if config.mc_smoothing => {
                    Propensity::Estimated((c[arm] as f64 + 1.0) / (m as f64 + k as f64))
                }
                Some((m, c)) => Propensity::Estimated(c[arm] as f64 / m as f64),
                None => Propensity::Unavailable,
            };
            Ok(ActionDraw {
                arm,
                behavior_prob,
                distribution: None,
            })
        }
    }
}

/// Folds an observed reward into the state.
pub fn policy_update(state: &mut PolicyState, arm: usize, reward: f64) -> Result<(), PolicyError> {
    if !(0.0..=1.0).contains(&reward) {
        return Err(PolicyError::Reward(reward));
    }
    let n_arms = state.n_arms();
    let s = state
        .stats
        .get_mut(arm)
        .ok_or(PolicyError::ArmIndex { arm, n_arms })?;
    s.record(reward);
    Ok(())
}
