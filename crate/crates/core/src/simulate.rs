//! Seeded trials, regret accounting and batch aggregation.

use std::fmt::Write as _;
use std::io::{self, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::envs::{BanditInstance, EnvError};
use crate::policies::{policy_step, policy_update, PolicyConfig, PolicyError, PolicyState};
use crate::rng::{mix64, trial_seed, TrialStreams};

pub const LOG_MAGIC: &str = "#klms-log v1";

#[derive(Debug, Error)]
pub enum SimError {
    #[error("horizon {horizon} is shorter than the {n_arms}-round forced phase")]
    Horizon { horizon: u64, n_arms: usize },
    #[error("batch needs at least one trial")]
    NoTrials,
    #[error("checkpoints must be increasing and inside [1, {horizon}]: {detail}")]
    Checkpoints { horizon: u64, detail: String },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("failed to build worker pool: {0}")]
    Pool(String),
}

/// One logged interaction `(t, arm, propensity, reward)`; `t` is 1-based.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoggedStep {
    pub t: u64,
    pub arm: usize,
    /// `NaN` when the policy did not report a propensity.
    pub behavior_prob: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialLog {
    pub n_arms: usize,
    pub seed: u64,
    /// Hash of the policy and instance configuration that produced the log.
    pub fingerprint: u64,
    pub steps: Vec<LoggedStep>,
}

impl TrialLog {
    pub fn horizon(&self) -> u64 {
        self.steps.len() as u64
    }
}

/// Cumulative pseudo-regret at checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretCurve {
    /// `(t, sum of gaps of the arms pulled up to t)`.
    pub checkpoints: Vec<(u64, f64)>,
    /// `t mu* - sum of observed rewards`, at the same checkpoints.
    pub reward_accounting: Vec<f64>,
}

impl RegretCurve {
    pub fn final_regret(&self) -> f64 {
        self.checkpoints.last().map_or(0.0, |&(_, r)| r)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub log: TrialLog,
    pub regret: RegretCurve,
    /// Final pull counts per arm.
    pub pulls: Vec<u64>,
}

/// `{1, 2, 5} x 10^j` up to `horizon`, plus `horizon` itself.
pub fn default_checkpoints(horizon: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut scale = 1u64;
    'outer: loop {
        for m in [1u64, 2, 5] {
            let Some(c) = m.checked_mul(scale) else {
                break 'outer;
            };
            if c > horizon {
                break 'outer;
            }
            out.push(c);
        }
        match scale.checked_mul(10) {
            Some(s) => scale = s,
            None => break,
        }
    }
    if out.last() != Some(&horizon) && horizon > 0 {
        out.push(horizon);
    }
    out
}

fn validate_checkpoints(checkpoints: &[u64], horizon: u64) -> Result<(), SimError> {
    let err = |detail: String| SimError::Checkpoints { horizon, detail };
    if checkpoints.is_empty() {
        return Err(err("empty list".into()));
    }
    for w in checkpoints.windows(2) {
        if w[0] >= w[1] {
            return Err(err(format!("{} is not below {}", w[0], w[1])));
        }
    }
    if checkpoints[0] == 0 || *checkpoints.last().unwrap() > horizon {
        return Err(err(format!("{checkpoints:?}")));
    }
    Ok(())
}

/// FNV-1a over the debug form of the configuration.
pub fn fingerprint(policy: &PolicyConfig, instance: &BanditInstance) -> u64 {
    let text = format!(
        "{policy:?}|{:?}|{}",
        instance.arms(),
        instance.is_binarized()
    );
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn effective_seed(policy: &PolicyConfig, seed: u64) -> u64 {
    if policy.stream == 0 {
        seed
    } else {
        seed ^ mix64(policy.stream)
    }
}

/// Runs one trial with the default checkpoints.
pub fn run_trial(
    policy: &PolicyConfig,
    instance: &BanditInstance,
    horizon: u64,
    seed: u64,
) -> Result<TrialOutcome, SimError> {
    run_trial_at(
        policy,
        instance,
        horizon,
        seed,
        &default_checkpoints(horizon),
    )
}

/// Runs one trial, recording regret at the given checkpoints.
pub fn run_trial_at(
    policy: &PolicyConfig,
    instance: &BanditInstance,
    horizon: u64,
    seed: u64,
    checkpoints: &[u64],
) -> Result<TrialOutcome, SimError> {
    let k = instance.n_arms();
    policy.validate()?;
    if horizon < k as u64 {
        return Err(SimError::Horizon { horizon, n_arms: k });
    }
    validate_checkpoints(checkpoints, horizon)?;

    let gaps = instance.gaps();
    let mu_star = instance.mu_star();
    let mut streams = TrialStreams::new(effective_seed(policy, seed), k);
    let mut state = PolicyState::new(k);
    let mut steps = Vec::with_capacity(horizon as usize);
    let mut curve = RegretCurve {
        checkpoints: Vec::with_capacity(checkpoints.len()),
        reward_accounting: Vec::with_capacity(checkpoints.len()),
    };
    let mut next_cp = checkpoints.iter().copied().peekable();
    let mut gap_regret = 0.0;
    let mut reward_total = 0.0;

    for t in 1..=horizon {
        let draw = policy_step(policy, &state, t, &mut streams)?;
        let reward = instance.observe(draw.arm, &mut streams)?;
        policy_update(&mut state, draw.arm, reward)?;
        gap_regret += gaps[draw.arm];
        reward_total += reward;
        steps.push(LoggedStep {
            t,
            arm: draw.arm,
            behavior_prob: draw.behavior_prob.as_f64(),
            reward,
        });
        if next_cp.peek() == Some(&t) {
            next_cp.next();
            curve.checkpoints.push((t, gap_regret));
            curve
                .reward_accounting
                .push(t as f64 * mu_star - reward_total);
        }
    }

    Ok(TrialOutcome {
        log: TrialLog {
            n_arms: k,
            seed,
            fingerprint: fingerprint(policy, instance),
            steps,
        },
        regret: curve,
        pulls: state.stats.iter().map(|s| s.pulls).collect(),
    })
}

#[derive(Debug, Clone, Default)]
pub struct BatchOptions {
    /// Worker threads; 0 means all available cores.
    pub jobs: usize,
    pub retain_logs: bool,
    pub checkpoints: Option<Vec<u64>>,
}

/// Per-checkpoint aggregates over a batch of trials.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchResult {
    pub n_trials: u64,
    pub checkpoints: Vec<u64>,
    pub mean_regret: Vec<f64>,
    pub stderr: Vec<f64>,
    pub mean_reward_regret: Vec<f64>,
    /// Final pseudo-regret of each trial, in trial order.
    pub final_regrets: Vec<f64>,
    pub logs: Option<Vec<TrialLog>>,
}

impl BatchResult {
    pub fn final_mean(&self) -> f64 {
        *self.mean_regret.last().unwrap_or(&0.0)
    }

    pub fn final_stderr(&self) -> f64 {
        *self.stderr.last().unwrap_or(&0.0)
    }
}

/// Mean and standard error of the mean.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub(crate) fn with_pool<T: Send>(
    jobs: usize,
    work: impl FnOnce() -> T + Send,
) -> Result<T, SimError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| SimError::Pool(e.to_string()))?;
    Ok(pool.install(work))
}

/// Runs `n_trials` trials and aggregates their regret curves.
pub fn run_batch(
    policy: &PolicyConfig,
    instance: &BanditInstance,
    horizon: u64,
    n_trials: u64,
    base_seed: u64,
    options: &BatchOptions,
) -> Result<BatchResult, SimError> {
    let retain = options.retain_logs;
    let (mut result, logs) = run_batch_map(
        policy,
        instance,
        horizon,
        n_trials,
        base_seed,
        options,
        |_, outcome| retain.then(|| outcome.log.clone()),
    )?;
    if retain {
        result.logs = Some(logs.into_iter().flatten().collect());
    }
    Ok(result)
}

/// Like [`run_batch`], additionally mapping each trial outcome through `f`
/// inside the worker (so full logs need not be kept). Mapped values are
/// returned in trial order.
pub fn run_batch_map<R, F>(
    policy: &PolicyConfig,
    instance: &BanditInstance,
    horizon: u64,
    n_trials: u64,
    base_seed: u64,
    options: &BatchOptions,
    f: F,
) -> Result<(BatchResult, Vec<R>), SimError>
where
    R: Send,
    F: Fn(u64, &TrialOutcome) -> R + Sync,
{
    if n_trials == 0 {
        return Err(SimError::NoTrials);
    }
    let checkpoints = options
        .checkpoints
        .clone()
        .unwrap_or_else(|| default_checkpoints(horizon));
    // surface configuration errors once, before any work is scheduled
    policy.validate()?;
    if horizon < instance.n_arms() as u64 {
        return Err(SimError::Horizon {
            horizon,
            n_arms: instance.n_arms(),
        });
    }
    validate_checkpoints(&checkpoints, horizon)?;

    let per_trial: Vec<Result<(RegretCurve, R), SimError>> = with_pool(options.jobs, || {
        (0..n_trials)
            .into_par_iter()
            .map(|i| {
                let outcome = run_trial_at(
                    policy,
                    instance,
                    horizon,
                    trial_seed(base_seed, i),
                    &checkpoints,
                )?;
                let mapped = f(i, &outcome);
                Ok((outcome.regret, mapped))
            })
            .collect()
    })?;

    let mut curves = Vec::with_capacity(per_trial.len());
    let mut mapped = Vec::with_capacity(per_trial.len());
    for r in per_trial {
        let (c, m) = r?;
        curves.push(c);
        mapped.push(m);
    }

    let n_cp = checkpoints.len();
    let mut mean_regret = Vec::with_capacity(n_cp);
    let mut stderr = Vec::with_capacity(n_cp);
    let mut mean_reward_regret = Vec::with_capacity(n_cp);
    let mut column = Vec::with_capacity(curves.len());
    for j in 0..n_cp {
        column.clear();
        column.extend(curves.iter().map(|c| c.checkpoints[j].1));
        let (m, se) = mean_stderr(&column);
        mean_regret.push(m);
        stderr.push(se);
        mean_reward_regret
            .push(curves.iter().map(|c| c.reward_accounting[j]).sum::<f64>() / n_trials as f64);
    }

    Ok((
        BatchResult {
            n_trials,
            checkpoints,
            mean_regret,
            stderr,
            mean_reward_regret,
            final_regrets: curves.iter().map(RegretCurve::final_regret).collect(),
            logs: None,
        },
        mapped,
    ))
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("log line {line}: {message}")]
pub struct LogFormatError {
    pub line: usize,
    pub message: String,
}

/// Serializes a log: header line, then `t<TAB>arm<TAB>prob<TAB>reward` records
/// with propensities printed to 17 significant digits.
pub fn format_log(log: &TrialLog) -> String {
    let mut out = String::with_capacity(48 * log.steps.len() + 64);
    let _ = writeln!(
        out,
        "{LOG_MAGIC} K={} T={} seed={}",
        log.n_arms,
        log.horizon(),
        log.seed
    );
    for s in &log.steps {
        let _ = writeln!(
            out,
            "{}\t{}\t{:.16e}\t{}",
            s.t, s.arm, s.behavior_prob, s.reward
        );
    }
    out
}

pub fn write_log<W: Write>(log: &TrialLog, mut w: W) -> io::Result<()> {
    w.write_all(format_log(log).as_bytes())
}

/// Parses the text form written by [`format_log`].
pub fn parse_log(text: &str) -> Result<TrialLog, LogFormatError> {
    let err = |line: usize, message: String| LogFormatError { line, message };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| err(1, "missing header".into()))?;
    let rest = header
        .strip_prefix(LOG_MAGIC)
        .ok_or_else(|| err(1, format!("header must start with `{LOG_MAGIC}`")))?;
    let mut k = None;
    let mut horizon = None;
    let mut seed = None;
    for field in rest.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| err(1, format!("malformed header field `{field}`")))?;
        let parsed: u64 = value
            .parse()
            .map_err(|_| err(1, format!("header field `{key}` is not an integer")))?;
        match key {
            "K" => k = Some(parsed as usize),
            "T" => horizon = Some(parsed),
            "seed" => seed = Some(parsed),
            other => return Err(err(1, format!("unknown header field `{other}`"))),
        }
    }
    let (Some(k), Some(horizon), Some(seed)) = (k, horizon, seed) else {
        return Err(err(1, "header needs K, T and seed".into()));
    };
    if k == 0 {
        return Err(err(1, "K must be positive".into()));
    }

    let mut steps = Vec::with_capacity(horizon as usize);
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(err(
                lineno,
                format!("expected 4 fields, found {}", fields.len()),
            ));
        }
        let t: u64 = fields[0]
            .parse()
            .map_err(|_| err(lineno, format!("bad round `{}`", fields[0])))?;
        let arm: usize = fields[1]
            .parse()
            .map_err(|_| err(lineno, format!("bad arm `{}`", fields[1])))?;
        let behavior_prob: f64 = fields[2]
            .parse()
            .map_err(|_| err(lineno, format!("bad probability `{}`", fields[2])))?;
        let reward: f64 = fields[3]
            .parse()
            .map_err(|_| err(lineno, format!("bad reward `{}`", fields[3])))?;
        if arm >= k {
            return Err(err(lineno, format!("arm {arm} out of range for K={k}")));
        }
        if !(behavior_prob.is_nan() || (0.0..=1.0).contains(&behavior_prob)) {
            return Err(err(
                lineno,
                format!("probability {behavior_prob} outside [0, 1]"),
            ));
        }
        if !(0.0..=1.0).contains(&reward) {
            return Err(err(lineno, format!("reward {reward} outside [0, 1]")));
        }
        if let Some(prev) = steps.last().map(|s: &LoggedStep| s.t) {
            if t <= prev {
                return Err(err(lineno, format!("round {t} does not follow {prev}")));
            }
        }
        steps.push(LoggedStep {
            t,
            arm,
            behavior_prob,
            reward,
        });
    }
    if steps.len() as u64 != horizon {
        return Err(err(
            text.lines().count(),
            format!(
                "header declares T={horizon} but {} records follow",
                steps.len()
            ),
        ));
    }
    Ok(TrialLog {
        n_arms: k,
        seed,
        fingerprint: 0,
        steps,
    })
}
