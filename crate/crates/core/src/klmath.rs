//! Binary Kullback-Leibler primitives.
//!
//! Every policy and diagnostic in the crate scores arms through the binary
//! KL divergence `kl(p, q) = p ln(p/q) + (1-p) ln((1-p)/(1-q))`. The
//! functions here follow the usual conventions (`0 ln 0 = 0`, `kl(p, p) = 0`,
//! `kl(p, q) = +inf` when `q` is on the boundary and differs from `p`) and are
//! evaluated so that nearly-equal arguments do not lose precision.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default absolute tolerance for [`kl_upper_inverse`].
pub const DEFAULT_INVERSE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DomainError {
    #[error("probability must lie in [0, 1], got {0}")]
    Probability(f64),
    #[error("divergence budget must be non-negative, got {0}")]
    Budget(f64),
    #[error("tolerance must be positive and finite, got {0}")]
    Tolerance(f64),
}

/// A real number in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ProbValue(f64);

impl ProbValue {
    pub const ZERO: ProbValue = ProbValue(0.0);
    pub const ONE: ProbValue = ProbValue(1.0);

    pub fn new(value: f64) -> Result<Self, DomainError> {
        if (0.0..=1.0).contains(&value) {
            Ok(ProbValue(value))
        } else {
            Err(DomainError::Probability(value))
        }
    }

    /// Clamps into `[0, 1]`; NaN maps to zero.
    pub(crate) fn saturating(value: f64) -> Self {
        if value.is_nan() {
            ProbValue(0.0)
        } else {
            ProbValue(value.clamp(0.0, 1.0))
        }
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for ProbValue {
    type Error = DomainError;

    fn try_from(value: f64) -> Result<Self, Self::Error> {
        ProbValue::new(value)
    }
}

impl From<ProbValue> for f64 {
    fn from(p: ProbValue) -> f64 {
        p.0
    }
}

impl fmt::Display for ProbValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// A non-negative divergence value, possibly `+inf`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Divergence(f64);

impl Divergence {
    pub const ZERO: Divergence = Divergence(0.0);
    pub const INFINITE: Divergence = Divergence(f64::INFINITY);

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }

    pub fn is_infinite(self) -> bool {
        self.0.is_infinite()
    }
}

impl From<Divergence> for f64 {
    fn from(d: Divergence) -> f64 {
        d.0
    }
}

/// `x - ln(1 + x)` for `x >= -1`, accurate for small `|x|`.
fn x_minus_log1p(x: f64) -> f64 {
    if x.abs() < 1e-2 {
        // alternating tail of the log1p series: sum_{k>=2} (-1)^k x^k / k
        let mut term = x * x;
        let mut acc = 0.0;
        for k in 2..=11 {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            acc += sign * term / k as f64;
            term *= x;
        }
        acc
    } else {
        x - x.ln_1p()
    }
}

/// Binary KL divergence between Bernoulli(`p`) and Bernoulli(`q`).
pub fn binary_kl(p: ProbValue, q: ProbValue) -> Divergence {
    Divergence(kl_raw(p.0, q.0))
}

/// Unchecked core of [`binary_kl`]; callers guarantee both arguments are in `[0, 1]`.
#[inline]
pub(crate) fn kl_raw(p: f64, q: f64) -> f64 {
    if p == q {
        return 0.0;
    }
    if p == 0.0 {
        // ln(1/(1-q)); +inf at q = 1
        return -(-q).ln_1p();
    }
    if p == 1.0 {
        return -q.ln();
    }
    if q == 0.0 || q == 1.0 {
        return f64::INFINITY;
    }
    // With d = q - p the two first-order terms cancel exactly, leaving
    //   p (x - ln(1+x)) + (1-p) (y - ln(1+y)),  x = d/p,  y = -d/(1-p),
    // a sum of two non-negative parts.
    let d = q - p;
    let x = d / p;
    let y = -d / (1.0 - p);
    let v = p * x_minus_log1p(x) + (1.0 - p) * x_minus_log1p(y);
    v.max(0.0)
}

/// Bernoulli variance `mu (1 - mu)`.
pub fn mu_dot(mu: ProbValue) -> f64 {
    mu.0 * (1.0 - mu.0)
}

/// Refined Pinsker lower bound on `kl(mu_i, mu_j)`:
/// `max(gap^2 / (mu_dot_i + gap), gap^2 / (mu_dot_j + gap)) / 2`.
pub fn kl_refined_pinsker_lb(mu_i: ProbValue, mu_j: ProbValue) -> Divergence {
    let gap = (mu_j.0 - mu_i.0).abs();
    if gap == 0.0 {
        return Divergence::ZERO;
    }
    let sq = gap * gap;
    let a = sq / (mu_dot(mu_i) + gap);
    let b = sq / (mu_dot(mu_j) + gap);
    Divergence(0.5 * a.max(b))
}

/// Largest `mu` in `[p, 1]` with `kl(p, mu) <= budget`, found by bisection.
///
/// The returned value is the lower end of the final bracket, so
/// `kl(p, result) <= budget` always holds. The bracket is narrowed until its
/// width is at most `tol` and the remaining divergence slack is at most `tol`.
pub fn kl_upper_inverse(p: ProbValue, budget: f64, tol: f64) -> Result<ProbValue, DomainError> {
    if budget.is_nan() || budget < 0.0 {
        return Err(DomainError::Budget(budget));
    }
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(DomainError::Tolerance(tol));
    }
    Ok(ProbValue(upper_inverse_raw(p.0, budget, tol)))
}

pub(crate) fn upper_inverse_raw(p: f64, budget: f64, tol: f64) -> f64 {
    if budget == 0.0 || p == 1.0 {
        return p;
    }
    if budget == f64::INFINITY {
        return 1.0;
    }
    // invariant: kl(p, lo) <= budget < kl(p, hi)
    let mut lo = p;
    let mut hi = 1.0;
    let mut lo_kl = 0.0;
    loop {
        if hi - lo <= tol && budget - lo_kl <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let v = kl_raw(p, mid);
        if v <= budget {
            lo = mid;
            lo_kl = v;
        } else {
            hi = mid;
        }
    }
    lo
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pv(x: f64) -> ProbValue {
        ProbValue::new(x).unwrap()
    }

    fn kl(p: f64, q: f64) -> f64 {
        binary_kl(pv(p), pv(q)).get()
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl(0.5, 0.5), 0.0);
        assert_abs_diff_eq!(kl(0.0, 0.5), std::f64::consts::LN_2, epsilon = 1e-15);
        // 40-digit reference value
        assert_abs_diff_eq!(kl(0.2, 0.25), 0.007_002_106_647_214_986, epsilon = 1e-16);
        assert_abs_diff_eq!(kl(0.5, 0.9), (5.0f64 / 3.0).ln(), epsilon = 1e-15);
    }

    #[test]
    fn kl_boundaries() {
        assert_eq!(kl(0.3, 0.0), f64::INFINITY);
        assert_eq!(kl(0.3, 1.0), f64::INFINITY);
        assert_eq!(kl(0.0, 1.0), f64::INFINITY);
        assert_eq!(kl(1.0, 0.0), f64::INFINITY);
        assert_eq!(kl(0.0, 0.0), 0.0);
        assert_eq!(kl(1.0, 1.0), 0.0);
        assert_abs_diff_eq!(kl(1.0, 0.25), 4.0f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn kl_near_equal_arguments_keep_relative_precision() {
        // second-order expansion: d^2 / (2 p (1-p))
        let p = 0.3;
        let d = 1e-9;
        let expect = d * d / (2.0 * p * (1.0 - p));
        let got = kl(p, p + d);
        assert!(((got - expect) / expect).abs() < 1e-6, "{got} vs {expect}");
    }

    #[test]
    fn domain_errors() {
        assert!(ProbValue::new(-0.1).is_err());
        assert!(ProbValue::new(1.0 + 1e-12).is_err());
        assert!(ProbValue::new(f64::NAN).is_err());
        assert_eq!(
            kl_upper_inverse(pv(0.5), -1.0, 1e-10),
            Err(DomainError::Budget(-1.0))
        );
        assert!(kl_upper_inverse(pv(0.5), 1.0, 0.0).is_err());
        assert!(kl_upper_inverse(pv(0.5), f64::NAN, 1e-10).is_err());
    }

    #[test]
    fn mu_dot_examples() {
        assert_eq!(mu_dot(pv(0.0)), 0.0);
        assert_eq!(mu_dot(pv(1.0)), 0.0);
        assert_eq!(mu_dot(pv(0.5)), 0.25);
        assert_abs_diff_eq!(mu_dot(pv(0.9)), 0.09, epsilon = 1e-15);
    }

    #[test]
    fn refined_pinsker_examples() {
        assert_eq!(kl_refined_pinsker_lb(pv(0.3), pv(0.3)).get(), 0.0);
        assert_abs_diff_eq!(
            kl_refined_pinsker_lb(pv(0.2), pv(0.25)).get(),
            0.005_952_380_952_380_952,
            epsilon = 1e-15
        );
    }

    #[test]
    fn upper_inverse_examples() {
        assert_eq!(kl_upper_inverse(pv(0.5), 0.0, 1e-10).unwrap().get(), 0.5);
        assert_eq!(
            kl_upper_inverse(pv(0.3), f64::INFINITY, 1e-10)
                .unwrap()
                .get(),
            1.0
        );
        assert_eq!(kl_upper_inverse(pv(1.0), 0.7, 1e-10).unwrap().get(), 1.0);
        // kl(1/2, q) = ln 2  <=>  q (1 - q) = 1/16
        let oracle = (1.0 + (0.75f64).sqrt()) / 2.0;
        let got = kl_upper_inverse(pv(0.5), std::f64::consts::LN_2, 1e-10)
            .unwrap()
            .get();
        assert_abs_diff_eq!(got, oracle, epsilon = 1e-10);
        assert!(got <= oracle);
    }

    #[test]
    fn upper_inverse_from_zero_mean() {
        // kl(0, q) = -ln(1 - q)  =>  q = 1 - exp(-b)
        let b = 0.4;
        let got = kl_upper_inverse(pv(0.0), b, 1e-12).unwrap().get();
        assert_abs_diff_eq!(got, 1.0 - (-b).exp(), epsilon = 1e-12);
    }
}
