//! Command-line front end: `regret`, `offline-eval`, `diagnose` and `validate`.
//!
//! Every command is a pure function of the config file and the seed. Output
//! files are fully rewritten on each run.

use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use crate::config::ExperimentConfig;
use crate::diagnostics::{asymptotic_constant, finite_time_bound, minimax_rate};
use crate::envs::BanditInstance;
use crate::ope::{
    aggregate_ipw, format_ope_csv, ipw_general, AggregateReport, IpwReport, OpeError, OpeRow,
};
use crate::policies::{PolicyConfig, PolicyKind};
use crate::simulate::{default_checkpoints, run_batch_map, write_log, BatchOptions, TrialOutcome};
use crate::svg::{self, HistSeries, LineSeries};

pub const SCHEMA_LINE: &str = "#schema=1";
pub const REGRET_CSV_HEADER: &str = "policy,t,mean_regret,stderr,n_trials";
pub const CROSSCHECK_CSV_HEADER: &str = "policy,t,gap_accounting,reward_accounting";
pub const ESTIMATES_CSV_HEADER: &str = "policy,M,trial,estimate";
pub const DIAGNOSTICS_CSV_HEADER: &str =
    "t,asymptotic_constant,finite_time_bound,minimax_rate,mean_regret,stderr,regret_over_ln_t";

#[derive(Debug, Parser)]
#[command(name = "klms", version, about = "KL Maillard sampling bandit lab")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate every configured policy and write regret curves.
    Regret(RunArgs),
    /// Evaluate the target policy by IPW on logs of every configured policy.
    OfflineEval(RunArgs),
    /// Theoretical quantities next to a long KL-MS run.
    Diagnose(RunArgs),
    /// Check the config and print the instance summary.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads; 0 uses every available core.
    #[arg(long, value_name = "N", default_value_t = 0)]
    pub jobs: usize,
    /// Base seed; overrides `seed` from the config.
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    /// Report `(count + 1) / (M + K)` as the Thompson sampling propensity.
    #[arg(long)]
    pub mc_smoothing: bool,
    /// Persist every trial log under `<out>/logs/`.
    #[arg(long)]
    pub keep_logs: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
}

/// Execution settings that are not part of the experiment itself.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub jobs: usize,
    pub keep_logs: bool,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Regret(args) => {
            let (cfg, opts) = prepare(&args)?;
            cmd_regret(&cfg, &opts).map(drop)
        }
        Command::OfflineEval(args) => {
            let (cfg, opts) = prepare(&args)?;
            cmd_offline_eval(&cfg, &opts).map(drop)
        }
        Command::Diagnose(args) => {
            let (cfg, opts) = prepare(&args)?;
            cmd_diagnose(&cfg, &opts).map(drop)
        }
        Command::Validate(args) => {
            let cfg = ExperimentConfig::load(&args.config)?;
            print!("{}", validate_summary(&cfg)?);
            Ok(())
        }
    }
}

/// Loads the config and applies command-line overrides.
pub fn prepare(args: &RunArgs) -> Result<(ExperimentConfig, RunOptions)> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.mc_smoothing {
        for p in &mut cfg.policies {
            p.mc_smoothing = true;
        }
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    let opts = RunOptions {
        out_dir: cfg.output_dir.clone(),
        jobs: args.jobs,
        keep_logs: args.keep_logs,
    };
    Ok((cfg, opts))
}

/// Human-readable summary printed by `validate`.
pub fn validate_summary(cfg: &ExperimentConfig) -> Result<String> {
    let inst = cfg.build_instance()?;
    let s = inst.summary();
    let mut out = String::new();
    writeln!(out, "config ok")?;
    writeln!(out, "arms: {}", inst.n_arms())?;
    writeln!(out, "means: {}", join(inst.means()))?;
    writeln!(out, "mu*: {}", s.mu_star)?;
    writeln!(out, "gaps: {}", join(&s.gaps))?;
    writeln!(out, "mean of means: {}", s.mean_of_means)?;
    writeln!(out, "binary rewards: {}", inst.has_binary_rewards())?;
    writeln!(
        out,
        "horizon: {}, trials: {}, seed: {}",
        cfg.horizon, cfg.trials, cfg.seed
    )?;
    let labels: Vec<String> = cfg.policies.iter().map(PolicyConfig::label).collect();
    writeln!(out, "policies: {}", labels.join(", "))?;
    Ok(out)
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(f64::to_string).collect::<Vec<_>>().join(", ")
}

/// Labels made unique by appending `#i` to repeats.
fn unique_labels(policies: &[PolicyConfig]) -> Vec<String> {
    let base: Vec<String> = policies.iter().map(PolicyConfig::label).collect();
    base.iter()
        .enumerate()
        .map(|(i, l)| {
            if base.iter().filter(|b| *b == l).count() > 1 {
                format!("{l}#{}", i + 1)
            } else {
                l.clone()
            }
        })
        .collect()
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<PathBuf> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))?;
    info!("wrote {}", path.display());
    Ok(path.to_path_buf())
}

fn persist_log(dir: &Path, trial: u64, outcome: &TrialOutcome) -> Result<()> {
    let path = dir.join(format!("trial_{trial:05}.log"));
    let file =
        fs::File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
    write_log(&outcome.log, BufWriter::new(file))
        .with_context(|| format!("cannot write {}", path.display()))
}

fn log_dir(opts: &RunOptions, name: &str) -> Result<Option<PathBuf>> {
    if !opts.keep_logs {
        return Ok(None);
    }
    let dir = opts.out_dir.join("logs").join(name);
    create_dir(&dir)?;
    Ok(Some(dir))
}

fn batch_options(opts: &RunOptions, checkpoints: Vec<u64>) -> BatchOptions {
    BatchOptions {
        jobs: opts.jobs,
        retain_logs: false,
        checkpoints: Some(checkpoints),
    }
}

/// Writes `regret.csv`, `regret_crosscheck.csv` and `regret.svg`.
pub fn cmd_regret(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<PathBuf>> {
    let inst = cfg.build_instance()?;
    let checkpoints = cfg
        .checkpoints
        .clone()
        .unwrap_or_else(|| default_checkpoints(cfg.horizon));
    create_dir(&opts.out_dir)?;

    let labels = unique_labels(&cfg.policies);
    let mut csv = format!("{SCHEMA_LINE}\n{REGRET_CSV_HEADER}\n");
    let mut cross = format!("{SCHEMA_LINE}\n{CROSSCHECK_CSV_HEADER}\n");
    let mut series = Vec::new();
    for (policy, label) in cfg.policies.iter().zip(&labels) {
        info!(
            "regret: {label}, {} trials of {} rounds",
            cfg.trials, cfg.horizon
        );
        let logs = log_dir(opts, label)?;
        let (res, written) = run_batch_map(
            policy,
            &inst,
            cfg.horizon,
            cfg.trials,
            cfg.seed,
            &batch_options(opts, checkpoints.clone()),
            |i, o| logs.as_deref().map_or(Ok(()), |d| persist_log(d, i, o)),
        )?;
        written.into_iter().collect::<Result<Vec<()>>>()?;
        for (j, &t) in res.checkpoints.iter().enumerate() {
            writeln!(
                csv,
                "{label},{t},{:.17e},{:.17e},{}",
                res.mean_regret[j], res.stderr[j], res.n_trials
            )?;
            writeln!(
                cross,
                "{label},{t},{:.17e},{:.17e}",
                res.mean_regret[j], res.mean_reward_regret[j]
            )?;
        }
        series.push(LineSeries {
            label: label.clone(),
            points: res
                .checkpoints
                .iter()
                .map(|&t| t as f64)
                .zip(res.mean_regret.iter().copied())
                .collect(),
            band: Some(res.stderr.iter().map(|s| 2.0 * s).collect()),
            dashed: false,
        });
    }

    let title = format!(
        "Regret, means [{}], {} trials",
        join(inst.means()),
        cfg.trials
    );
    let plot = svg::line_plot_logx(
        &title,
        "round t",
        "mean pseudo-regret",
        &series,
        &["bands: +/- 2 std. err.".to_string()],
    );
    Ok(vec![
        write_file(&opts.out_dir.join("regret.csv"), &csv)?,
        write_file(&opts.out_dir.join("regret_crosscheck.csv"), &cross)?,
        write_file(&opts.out_dir.join("regret.svg"), &plot)?,
    ])
}

/// One behavior configuration evaluated offline: a policy, with `M` fixed
/// for Thompson sampling.
fn ope_variants(cfg: &ExperimentConfig) -> Result<Vec<(String, PolicyConfig)>> {
    let labels = unique_labels(&cfg.policies);
    let mut out = Vec::new();
    for (p, label) in cfg.policies.iter().zip(labels) {
        if p.kind != PolicyKind::BernoulliTs {
            out.push((label, p.clone()));
            continue;
        }
        let ms: Vec<u32> = if cfg.ope.mc_samples.is_empty() {
            p.mc_samples.into_iter().collect()
        } else {
            cfg.ope.mc_samples.clone()
        };
        if ms.is_empty() {
            bail!("{label}: offline evaluation needs `mc_samples` on the policy or in [ope]");
        }
        for m in ms {
            let mut v = p.clone();
            v.mc_samples = Some(m);
            out.push((label.clone(), v));
        }
    }
    Ok(out)
}

/// Writes `ope.csv`, `ope_estimates.csv` and `ope_hist.svg`.
pub fn cmd_offline_eval(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<OpeRow>> {
    if !cfg.ope.enabled {
        bail!("ope.enabled is false; nothing to evaluate");
    }
    let inst = cfg.build_instance()?;
    let target = cfg.target(inst.n_arms())?;
    let truth: f64 = target.iter().zip(inst.means()).map(|(q, m)| q * m).sum();
    let trials = cfg.ope.trials.unwrap_or(cfg.trials);
    create_dir(&opts.out_dir)?;

    let mut rows = Vec::new();
    let mut estimates = format!("{SCHEMA_LINE}\n{ESTIMATES_CSV_HEADER}\n");
    let mut hist = Vec::new();
    for (label, policy) in ope_variants(cfg)? {
        let m_col = policy
            .mc_samples
            .filter(|_| policy.kind == PolicyKind::BernoulliTs);
        let name = match m_col {
            Some(m) => format!("{label}-m{m}"),
            None => label.clone(),
        };
        info!(
            "offline-eval: {name}, {trials} trials of {} rounds",
            cfg.horizon
        );
        let logs = log_dir(opts, &name)?;
        let (_, mapped) = run_batch_map(
            &policy,
            &inst,
            cfg.horizon,
            trials,
            cfg.seed,
            &batch_options(opts, vec![cfg.horizon]),
            |i, o| -> Result<IpwReport> {
                if let Some(d) = logs.as_deref() {
                    persist_log(d, i, o)?;
                }
                Ok(ipw_general(&o.log, &target)?)
            },
        )?;
        let reports = mapped.into_iter().collect::<Result<Vec<_>>>()?;
        let report = match aggregate_ipw(&reports, truth) {
            Ok(r) => r,
            Err(OpeError::NoValidTrials) => {
                log::warn!("{name}: every trial is invalid");
                AggregateReport {
                    n_trials: reports.len() as u64,
                    n_invalid: reports.len() as u64,
                    mse: f64::NAN,
                    bias: f64::NAN,
                    truth,
                }
            }
            Err(e) => return Err(e.into()),
        };
        let m_text = m_col.map(|m| m.to_string()).unwrap_or_default();
        for (i, r) in reports.iter().enumerate() {
            let e = r.estimate.map(|e| format!("{e:.17e}")).unwrap_or_default();
            writeln!(estimates, "{label},{m_text},{i},{e}")?;
        }
        println!(
            "{name}: mse {:.5} bias {:+.5} invalid {}/{}",
            report.mse, report.bias, report.n_invalid, report.n_trials
        );
        hist.push(HistSeries {
            label: name.clone(),
            values: reports.iter().filter_map(|r| r.estimate).collect(),
        });
        rows.push(OpeRow {
            policy: label,
            mc_samples: m_col,
            horizon: cfg.horizon,
            report,
        });
    }

    let title = format!("IPW estimates, T = {}, {trials} trials", cfg.horizon);
    let truth_label = format!("truth {truth:.4}");
    let notes: Vec<String> = hist
        .iter()
        .zip(&rows)
        .map(|(h, r)| format!("{}: mse {:.5}", h.label, r.report.mse))
        .collect();
    let plot = svg::histogram(
        &title,
        "estimated value",
        &hist,
        40,
        Some((truth, &truth_label)),
        &notes,
    );
    write_file(&opts.out_dir.join("ope.csv"), &format_ope_csv(&rows))?;
    write_file(&opts.out_dir.join("ope_estimates.csv"), &estimates)?;
    write_file(&opts.out_dir.join("ope_hist.svg"), &plot)?;
    Ok(rows)
}

/// One row of `diagnostics.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsRow {
    pub t: u64,
    pub asymptotic_constant: f64,
    pub finite_time_bound: f64,
    pub minimax_rate: f64,
    pub mean_regret: f64,
    pub stderr: f64,
}

impl DiagnosticsRow {
    pub fn regret_over_ln_t(&self) -> f64 {
        self.mean_regret / (self.t as f64).ln()
    }
}

/// Evaluates the diagnostics grid for `inst` with a KL-MS run of the given size.
pub fn diagnostics_rows(
    inst: &BanditInstance,
    policy: &PolicyConfig,
    cfg: &ExperimentConfig,
    opts: &RunOptions,
) -> Result<Vec<DiagnosticsRow>> {
    let horizon = cfg.diagnose.long_horizon.unwrap_or(cfg.horizon);
    let grid: Vec<u64> = default_checkpoints(horizon)
        .into_iter()
        .filter(|&t| t >= 2 && t >= inst.n_arms() as u64)
        .collect();
    if grid.is_empty() {
        bail!("diagnose horizon {horizon} is too short");
    }
    let constant = asymptotic_constant(inst)?;
    let bound_cfg = cfg.diagnose.bound_config();
    info!(
        "diagnose: {} trials of {horizon} rounds",
        cfg.diagnose.long_trials
    );
    let (res, _) = run_batch_map(
        policy,
        inst,
        horizon,
        cfg.diagnose.long_trials,
        cfg.seed,
        &batch_options(opts, grid.clone()),
        |_, _| (),
    )?;
    grid.iter()
        .enumerate()
        .map(|(j, &t)| {
            Ok(DiagnosticsRow {
                t,
                asymptotic_constant: constant,
                finite_time_bound: finite_time_bound(inst, t, bound_cfg)?,
                minimax_rate: minimax_rate(inst, t)?,
                mean_regret: res.mean_regret[j],
                stderr: res.stderr[j],
            })
        })
        .collect()
}

/// Writes `diagnostics.csv` and `diagnostics.svg`.
pub fn cmd_diagnose(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<DiagnosticsRow>> {
    let inst = cfg.build_instance()?;
    if !inst.has_binary_rewards() {
        bail!("diagnose needs Bernoulli arms (or `binarize = true`)");
    }
    let policy = cfg
        .policies
        .iter()
        .find(|p| p.kind == PolicyKind::KlMs)
        .cloned()
        .unwrap_or_else(PolicyConfig::kl_ms);
    create_dir(&opts.out_dir)?;
    let rows = diagnostics_rows(&inst, &policy, cfg, opts)?;

    let mut csv = format!("{SCHEMA_LINE}\n{DIAGNOSTICS_CSV_HEADER}\n");
    for r in &rows {
        writeln!(
            csv,
            "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            r.t,
            r.asymptotic_constant,
            r.finite_time_bound,
            r.minimax_rate,
            r.mean_regret,
            r.stderr,
            r.regret_over_ln_t()
        )?;
    }
    let ts = || rows.iter().map(|r| r.t as f64);
    let series = vec![
        LineSeries {
            label: "kl-ms regret".into(),
            points: ts().zip(rows.iter().map(|r| r.mean_regret)).collect(),
            band: Some(rows.iter().map(|r| 2.0 * r.stderr).collect()),
            dashed: false,
        },
        LineSeries {
            label: "C ln t".into(),
            points: ts()
                .zip(
                    rows.iter()
                        .map(|r| r.asymptotic_constant * (r.t as f64).ln()),
                )
                .collect(),
            band: None,
            dashed: true,
        },
        LineSeries {
            label: "minimax rate".into(),
            points: ts().zip(rows.iter().map(|r| r.minimax_rate)).collect(),
            band: None,
            dashed: true,
        },
    ];
    let constant = rows.first().map_or(0.0, |r| r.asymptotic_constant);
    let notes = [
        format!("C = {constant:.4}"),
        "rates unscaled".to_string(),
        "bands: +/- 2 std. err.".to_string(),
    ];
    let plot = svg::line_plot_logx(
        "KL-MS regret against rates",
        "round t",
        "regret",
        &series,
        &notes,
    );
    write_file(&opts.out_dir.join("diagnostics.csv"), &csv)?;
    write_file(&opts.out_dir.join("diagnostics.svg"), &plot)?;
    for r in &rows {
        println!(
            "t={:>9} regret {:>10.3} +/- {:<8.3} regret/ln t {:>8.4} bound {:.1}",
            r.t,
            r.mean_regret,
            r.stderr,
            r.regret_over_ln_t(),
            r.finite_time_bound
        );
    }
    Ok(rows)
}
