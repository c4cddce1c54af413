//! Inverse-propensity-weighted offline evaluation of logged bandit data.
//!
//! A log is *invalid* as soon as any step carries a zero propensity: the
//! importance weight of that step is undefined, whatever its reward. Invalid
//! logs yield no estimate and are counted separately when aggregating.

use std::fmt::Write as _;

use thiserror::Error;

use crate::simulate::{LogFormatError, TrialLog};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OpeError {
    #[error("log is empty")]
    EmptyLog,
    #[error("log has {log} arms but {expected} were expected")]
    ArmCount { log: usize, expected: usize },
    #[error("target policy has {0} entries that do not form a distribution")]
    Target(usize),
    #[error("round {t} has no recorded propensity")]
    MissingPropensity { t: u64 },
    #[error("truth {0} outside [0, 1]")]
    Truth(f64),
    #[error("no valid trials to aggregate")]
    NoValidTrials,
    #[error(transparent)]
    Format(#[from] LogFormatError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IpwReport {
    /// Present iff the log is valid.
    pub estimate: Option<f64>,
    pub valid: bool,
    pub zero_prob_steps: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateReport {
    pub n_trials: u64,
    pub n_invalid: u64,
    pub mse: f64,
    pub bias: f64,
    pub truth: f64,
}

impl AggregateReport {
    pub fn invalid_fraction(&self) -> f64 {
        self.n_invalid as f64 / self.n_trials as f64
    }
}

/// IPW estimate of the uniform policy's value: `(1/T) sum (1/K) / p_t * r_t`.
pub fn ipw_uniform(log: &TrialLog, n_arms: usize) -> Result<IpwReport, OpeError> {
    if log.n_arms != n_arms {
        return Err(OpeError::ArmCount {
            log: log.n_arms,
            expected: n_arms,
        });
    }
    ipw_general(log, &vec![1.0 / n_arms as f64; n_arms])
}

/// IPW estimate of an arbitrary fixed target distribution over arms.
pub fn ipw_general(log: &TrialLog, target: &[f64]) -> Result<IpwReport, OpeError> {
    if target.len() != log.n_arms {
        return Err(OpeError::ArmCount {
            log: log.n_arms,
            expected: target.len(),
        });
    }
    let total: f64 = target.iter().sum();
    if target.iter().any(|&q| !(0.0..=1.0).contains(&q)) || (total - 1.0).abs() > 1e-9 {
        return Err(OpeError::Target(target.len()));
    }
    if log.steps.is_empty() {
        return Err(OpeError::EmptyLog);
    }

    let mut zero_prob_steps = 0u64;
    let mut sum = 0.0;
    for s in &log.steps {
        let p = s.behavior_prob;
        if p.is_nan() {
            return Err(OpeError::MissingPropensity { t: s.t });
        }
        if p == 0.0 {
            zero_prob_steps += 1;
            continue;
        }
        sum += target[s.arm] / p * s.reward;
    }
    let valid = zero_prob_steps == 0;
    Ok(IpwReport {
        estimate: valid.then(|| sum / log.steps.len() as f64),
        valid,
        zero_prob_steps,
    })
}

/// MSE and bias over valid reports; invalid reports are only counted.
pub fn aggregate_ipw(reports: &[IpwReport], truth: f64) -> Result<AggregateReport, OpeError> {
    if !(0.0..=1.0).contains(&truth) {
        return Err(OpeError::Truth(truth));
    }
    let estimates: Vec<f64> = reports.iter().filter_map(|r| r.estimate).collect();
    if estimates.is_empty() {
        return Err(OpeError::NoValidTrials);
    }
    let n = estimates.len() as f64;
    let mse = estimates.iter().map(|e| (e - truth).powi(2)).sum::<f64>() / n;
    let bias = estimates.iter().sum::<f64>() / n - truth;
    Ok(AggregateReport {
        n_trials: reports.len() as u64,
        n_invalid: reports.iter().filter(|r| !r.valid).count() as u64,
        mse,
        bias,
        truth,
    })
}

/// One row of the `ope.csv` summary.
#[derive(Debug, Clone, PartialEq)]
pub struct OpeRow {
    pub policy: String,
    /// Monte-Carlo samples, when the policy estimates its propensities.
    pub mc_samples: Option<u32>,
    pub horizon: u64,
    pub report: AggregateReport,
}

pub const OPE_CSV_HEADER: &str = "policy,M,T,n_trials,n_invalid,mse,bias";

pub fn format_ope_csv(rows: &[OpeRow]) -> String {
    let mut out = String::from("#schema=1\n");
    out.push_str(OPE_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let m = r.mc_samples.map(|m| m.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{:.17e},{:.17e}",
            r.policy,
            m,
            r.horizon,
            r.report.n_trials,
            r.report.n_invalid,
            r.report.mse,
            r.report.bias
        );
    }
    out
}
