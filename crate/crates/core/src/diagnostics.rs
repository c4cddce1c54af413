//! Theoretical regret quantities of KL-MS and concentration checkers.

use std::f64::consts::E;

use rand::Rng;
use thiserror::Error;

use crate::envs::BanditInstance;
use crate::klmath::{kl_raw, mu_dot, ProbValue};

/// Leading constant of the lower-order term of the finite-time bound.
pub const BOUND_LOWER_ORDER_CONSTANT: f64 = 392.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiagnosticsError {
    #[error("gap threshold must be non-negative, got {0}")]
    Delta(f64),
    #[error("c must lie in (0, 1/4], got {0}")]
    C(f64),
    #[error("horizon must be at least {min}, got {got}")]
    Horizon { min: u64, got: u64 },
    #[error("the asymptotic constant is defined for Bernoulli rewards only (arm {0} is not)")]
    NotBernoulli(usize),
    #[error("need at least {0} arms")]
    Arms(usize),
    #[error("{0}")]
    Parameter(String),
}

/// Gap threshold `delta >= 0` and slack `c` in `(0, 1/4]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundConfig {
    pub delta: f64,
    pub c: f64,
}

impl Default for BoundConfig {
    fn default() -> Self {
        BoundConfig {
            delta: 0.0,
            c: 0.25,
        }
    }
}

impl BoundConfig {
    pub fn validate(&self) -> Result<(), DiagnosticsError> {
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(DiagnosticsError::Delta(self.delta));
        }
        if !(self.c > 0.0 && self.c <= 0.25) {
            return Err(DiagnosticsError::C(self.c));
        }
        Ok(())
    }
}

/// `sum_{a: gap_a > 0} gap_a / kl(mu_a, mu*)`, the limit of `Reg(T) / ln T`
/// for Bernoulli rewards.
pub fn asymptotic_constant(instance: &BanditInstance) -> Result<f64, DiagnosticsError> {
    if !instance.has_binary_rewards() {
        let arm = instance
            .arms()
            .iter()
            .position(|a| !a.is_bernoulli())
            .unwrap_or(0);
        return Err(DiagnosticsError::NotBernoulli(arm));
    }
    let best = instance.mu_star();
    Ok(instance
        .means()
        .iter()
        .filter(|&&m| best - m > 0.0)
        .map(|&m| (best - m) / kl_raw(m, best))
        .sum())
}

/// Per-arm pieces of the finite-time bound, for arms with gap above the threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundTerms {
    pub gap: f64,
    /// `gap ln(T kl' v e^2) / kl'` with `kl' = kl(mu_a + c gap, mu* - c gap)`.
    pub log_term: f64,
    /// `392 ((mu_dot* + gap) / (c^2 gap)) ln(min(...) v e^2)`.
    pub lower_order_term: f64,
}

pub fn finite_time_bound_terms(
    instance: &BanditInstance,
    horizon: u64,
    cfg: BoundConfig,
) -> Result<Vec<BoundTerms>, DiagnosticsError> {
    cfg.validate()?;
    if horizon < 1 {
        return Err(DiagnosticsError::Horizon {
            min: 1,
            got: horizon,
        });
    }
    let t = horizon as f64;
    let c = cfg.c;
    let mu1 = instance.mu_star();
    let md1 = mu_dot(ProbValue::saturating(mu1));
    let e2 = E * E;
    Ok(instance
        .gaps()
        .into_iter()
        .zip(instance.means())
        .filter(|&(gap, _)| gap > cfg.delta)
        .map(|(gap, &mu)| {
            let shrunk = kl_raw(
                (mu + c * gap).clamp(0.0, 1.0),
                (mu1 - c * gap).clamp(0.0, 1.0),
            );
            let log_term = gap * (t * shrunk).max(e2).ln() / shrunk;
            let scale = md1 + gap;
            let inner = (scale / (c * c * gap * gap)).min(c * c * t * gap * gap / scale);
            let lower_order_term =
                BOUND_LOWER_ORDER_CONSTANT * (scale / (c * c * gap)) * inner.max(e2).ln();
            BoundTerms {
                gap,
                log_term,
                lower_order_term,
            }
        })
        .collect())
}

/// Finite-time regret bound of KL-MS:
/// `T delta + sum_a log_term_a + sum_a lower_order_term_a` over arms with
/// `gap_a > delta`.
pub fn finite_time_bound(
    instance: &BanditInstance,
    horizon: u64,
    cfg: BoundConfig,
) -> Result<f64, DiagnosticsError> {
    let terms = finite_time_bound_terms(instance, horizon, cfg)?;
    Ok(horizon as f64 * cfg.delta
        + terms
            .iter()
            .map(|b| b.log_term + b.lower_order_term)
            .sum::<f64>())
}

/// Unscaled adaptive worst-case rate `sqrt(mu_dot* K T ln K) + K ln T`.
pub fn minimax_rate(instance: &BanditInstance, horizon: u64) -> Result<f64, DiagnosticsError> {
    let k = instance.n_arms();
    if k < 2 {
        return Err(DiagnosticsError::Arms(2));
    }
    if horizon < 2 {
        return Err(DiagnosticsError::Horizon {
            min: 2,
            got: horizon,
        });
    }
    let kf = k as f64;
    let t = horizon as f64;
    let md1 = mu_dot(ProbValue::saturating(instance.mu_star()));
    Ok((md1 * kf * t * kf.ln()).sqrt() + kf * t.ln())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailReport {
    /// Fraction of trials with `mean_n < mu - eps`.
    pub empirical: f64,
    /// `exp(-n kl(mu - eps, mu))`.
    pub bound: f64,
    /// Three binomial standard errors at the bound.
    pub slack: f64,
    pub passed: bool,
}

/// Checks the Chernoff lower-tail bound `P(mean_n < mu - eps) <= exp(-n kl(mu - eps, mu))`
/// for Bernoulli(`mu`) samples by simulation.
pub fn chernoff_tail_check<R: Rng + ?Sized>(
    mu: f64,
    eps: f64,
    n: u64,
    trials: u64,
    rng: &mut R,
) -> Result<TailReport, DiagnosticsError> {
    if !(0.0..=1.0).contains(&mu) {
        return Err(DiagnosticsError::Parameter(format!(
            "mean {mu} outside [0, 1]"
        )));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(DiagnosticsError::Parameter(format!(
            "epsilon must be positive, got {eps}"
        )));
    }
    if n == 0 || trials == 0 {
        return Err(DiagnosticsError::Parameter(
            "sample size and trial count must be positive".into(),
        ));
    }
    let threshold = mu - eps;
    let bound = (-(n as f64) * kl_raw(threshold.max(0.0), mu)).exp();
    let mut hits = 0u64;
    if threshold > 0.0 {
        // mean < threshold  <=>  successes < n * threshold
        let cut = n as f64 * threshold;
        for _ in 0..trials {
            let successes = (0..n).filter(|_| rng.random::<f64>() < mu).count();
            if (successes as f64) < cut {
                hits += 1;
            }
        }
    }
    let empirical = hits as f64 / trials as f64;
    let slack = 3.0 * (bound * (1.0 - bound) / trials as f64).sqrt();
    Ok(TailReport {
        empirical,
        bound,
        slack,
        passed: empirical <= bound + slack,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use crate::envs::ArmDistribution;

    fn bern(m: &[f64]) -> BanditInstance {
        BanditInstance::bernoulli(m).unwrap()
    }

    #[test]
    fn asymptotic_constant_examples() {
        assert_eq!(asymptotic_constant(&bern(&[0.4, 0.4, 0.4])).unwrap(), 0.0);
        // 0.05 / kl(0.2, 0.25), 40-digit reference
        assert_abs_diff_eq!(
            asymptotic_constant(&bern(&[0.25, 0.2])).unwrap(),
            7.140_708_149_580_522,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            asymptotic_constant(&bern(&[0.9, 0.8])).unwrap(),
            2.252_099_698_524_529,
            epsilon = 1e-12
        );
        let general = BanditInstance::new(vec![
            ArmDistribution::Bernoulli { mean: 0.5 },
            ArmDistribution::ScaledBeta {
                a: 1.0,
                b: 1.0,
                low: 0.0,
                high: 1.0,
            },
        ])
        .unwrap();
        assert_eq!(
            asymptotic_constant(&general),
            Err(DiagnosticsError::NotBernoulli(1))
        );
        assert!(asymptotic_constant(&general.binarized()).is_ok());
    }

    #[test]
    fn bound_without_arms_above_threshold_is_linear_term() {
        let inst = bern(&[0.9, 0.8]);
        let cfg = BoundConfig {
            delta: 0.2,
            c: 0.25,
        };
        assert_eq!(finite_time_bound(&inst, 1000, cfg).unwrap(), 1000.0 * 0.2);
    }

    #[test]
    fn bound_reference_value() {
        // independent 40-digit evaluation of the two per-arm terms
        let inst = bern(&[0.9, 0.8]);
        let terms = finite_time_bound_terms(&inst, 10_000, BoundConfig::default()).unwrap();
        assert_eq!(terms.len(), 1);
        assert_abs_diff_eq!(terms[0].log_term, 44.863_407_448_283_87, epsilon = 1e-8);
        assert_abs_diff_eq!(
            terms[0].lower_order_term,
            41_629.108_432_648_11,
            epsilon = 1e-6
        );
        let total = finite_time_bound(&inst, 10_000, BoundConfig::default()).unwrap();
        assert_abs_diff_eq!(total, 41_673.971_840_096_4, epsilon = 1e-6);
    }

    #[test]
    fn bound_config_validation() {
        let inst = bern(&[0.9, 0.8]);
        for c in [0.0, 0.26, -0.1] {
            assert_eq!(
                finite_time_bound(&inst, 10, BoundConfig { delta: 0.0, c }),
                Err(DiagnosticsError::C(c))
            );
        }
        assert!(finite_time_bound(
            &inst,
            10,
            BoundConfig {
                delta: -1.0,
                c: 0.1
            }
        )
        .is_err());
        assert!(finite_time_bound(&inst, 0, BoundConfig::default()).is_err());
    }

    #[test]
    fn minimax_rate_examples() {
        let r = minimax_rate(&bern(&[0.8, 0.9]), 10_000).unwrap();
        assert_abs_diff_eq!(r, 53.742_981_419_416_61, epsilon = 1e-10);
        let r = minimax_rate(&bern(&[1.0, 0.3, 0.2]), 500).unwrap();
        assert_abs_diff_eq!(r, 3.0 * 500f64.ln(), epsilon = 1e-12);

        let inst = bern(&[0.5, 0.4]);
        let lead = |t: u64| minimax_rate(&inst, t).unwrap() - 2.0 * (t as f64).ln();
        assert_abs_diff_eq!(lead(2000) / lead(1000), 2f64.sqrt(), epsilon = 1e-12);
        assert!(minimax_rate(&bern(&[0.5]), 10).is_err());
    }

    #[test]
    fn chernoff_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let r = chernoff_tail_check(0.3, 0.5, 20, 100, &mut rng).unwrap();
        assert_eq!(r.empirical, 0.0);
        assert!(r.passed);

        let r = chernoff_tail_check(0.5, 0.2, 100, 20_000, &mut rng).unwrap();
        assert!(r.passed, "{r:?}");

        // n = 1: P(mean < 0.1) = P(X = 0) = 0.5 <= exp(-kl(0.1, 0.5))
        let r = chernoff_tail_check(0.5, 0.4, 1, 20_000, &mut rng).unwrap();
        assert_abs_diff_eq!(r.bound, 0.692_072_744_230_842_9, epsilon = 1e-14);
        assert!((r.empirical - 0.5).abs() < 0.02);
        assert!(r.passed);

        assert!(chernoff_tail_check(0.5, 0.0, 10, 10, &mut rng).is_err());
        assert!(chernoff_tail_check(1.5, 0.1, 10, 10, &mut rng).is_err());
        assert!(chernoff_tail_check(0.5, 0.1, 0, 10, &mut rng).is_err());
    }
}
