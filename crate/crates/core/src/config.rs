//! Experiment configuration files.
//!
//! Configs are TOML documents with explicit keys:
//!
//! ```toml
//! seed = 7
//! horizon = 10000
//! trials = 2000
//! output_dir = "out/figure1"
//!
//! [instance]
//! bernoulli = [0.8, 0.9]
//!
//! [[policies]]
//! kind = "kl-ms"
//!
//! [[policies]]
//! kind = "bernoulli-ts"
//! mc_samples = 1000
//!
//! [ope]
//! enabled = true
//! target = "uniform"
//! mc_samples = [1000]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::BoundConfig;
use crate::envs::{ArmDistribution, BanditInstance, EnvError};
use crate::policies::{PolicyConfig, PolicyError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot serialize config: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        path: path.into(),
        message: message.into(),
    }
}

/// Arms are given either as a list of Bernoulli means or as explicit
/// distributions.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bernoulli: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arms: Option<Vec<ArmDistribution>>,
    #[serde(default)]
    pub binarize: bool,
}

impl InstanceSpec {
    pub fn build(&self) -> Result<BanditInstance, ConfigError> {
        let map_env = |e: EnvError, field: &str| match e {
            EnvError::Distribution { arm, reason } => {
                invalid(format!("instance.{field}[{arm}]"), reason)
            }
            other => invalid(format!("instance.{field}"), other.to_string()),
        };
        let inst = match (&self.bernoulli, &self.arms) {
            (Some(means), None) => {
                BanditInstance::bernoulli(means).map_err(|e| map_env(e, "bernoulli"))?
            }
            (None, Some(arms)) => {
                BanditInstance::new(arms.clone()).map_err(|e| map_env(e, "arms"))?
            }
            _ => {
                return Err(invalid(
                    "instance",
                    "exactly one of `bernoulli` or `arms` must be given",
                ))
            }
        };
        Ok(if self.binarize {
            inst.binarized()
        } else {
            inst
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetSpec {
    /// Only `"uniform"` is recognized.
    Named(String),
    Weights(Vec<f64>),
}

impl Default for TargetSpec {
    fn default() -> Self {
        TargetSpec::Named("uniform".into())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpeSpec {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default)]
    pub target: TargetSpec,
    /// Monte-Carlo sample counts swept for Thompson sampling.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mc_samples: Vec<u32>,
    /// Trials for offline evaluation; defaults to the top-level `trials`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<u64>,
}

fn default_c() -> f64 {
    0.25
}

fn default_long_trials() -> u64 {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseSpec {
    #[serde(default)]
    pub delta: f64,
    #[serde(default = "default_c")]
    pub c: f64,
    /// Horizon of the accompanying KL-MS run; defaults to the top-level horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub long_horizon: Option<u64>,
    #[serde(default = "default_long_trials")]
    pub long_trials: u64,
}

impl Default for DiagnoseSpec {
    fn default() -> Self {
        DiagnoseSpec {
            delta: 0.0,
            c: default_c(),
            long_horizon: None,
            long_trials: default_long_trials(),
        }
    }
}

impl DiagnoseSpec {
    pub fn bound_config(&self) -> BoundConfig {
        BoundConfig {
            delta: self.delta,
            c: self.c,
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub horizon: u64,
    pub trials: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoints: Option<Vec<u64>>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub instance: InstanceSpec,
    pub policies: Vec<PolicyConfig>,
    #[serde(default)]
    pub ope: OpeSpec,
    #[serde(default)]
    pub diagnose: DiagnoseSpec,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    pub fn build_instance(&self) -> Result<BanditInstance, ConfigError> {
        self.instance.build()
    }

    /// Target distribution of the offline evaluation.
    pub fn target(&self, n_arms: usize) -> Result<Vec<f64>, ConfigError> {
        match &self.ope.target {
            TargetSpec::Named(name) if name == "uniform" => Ok(vec![1.0 / n_arms as f64; n_arms]),
            TargetSpec::Named(name) => Err(invalid(
                "ope.target",
                format!("unknown target `{name}` (expected \"uniform\" or a weight list)"),
            )),
            TargetSpec::Weights(w) => {
                if w.len() != n_arms {
                    return Err(invalid(
                        "ope.target",
                        format!("{} weights for {n_arms} arms", w.len()),
                    ));
                }
                if let Some(i) = w.iter().position(|x| !(0.0..=1.0).contains(x)) {
                    return Err(invalid(format!("ope.target[{i}]"), "weight outside [0, 1]"));
                }
                let total: f64 = w.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(invalid(
                        "ope.target",
                        format!("weights sum to {total}, not 1"),
                    ));
                }
                Ok(w.clone())
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inst = self.build_instance()?;
        let k = inst.n_arms() as u64;
        if self.horizon < k {
            return Err(invalid(
                "horizon",
                format!(
                    "{} is shorter than the {k}-round forced phase",
                    self.horizon
                ),
            ));
        }
        if self.trials == 0 {
            return Err(invalid("trials", "must be at least 1"));
        }
        if let Some(cps) = &self.checkpoints {
            if cps.is_empty() || cps[0] == 0 || cps.windows(2).any(|w| w[0] >= w[1]) {
                return Err(invalid(
                    "checkpoints",
                    "must be strictly increasing and positive",
                ));
            }
            if *cps.last().unwrap() > self.horizon {
                return Err(invalid(
                    "checkpoints",
                    "last checkpoint exceeds the horizon",
                ));
            }
        }
        if self.policies.is_empty() {
            return Err(invalid("policies", "at least one policy is required"));
        }
        for (i, p) in self.policies.iter().enumerate() {
            p.validate().map_err(|e| match e {
                PolicyError::Config(msg) => invalid(format!("policies[{i}]"), msg),
                other => invalid(format!("policies[{i}]"), other.to_string()),
            })?;
        }
        if let Some(i) = self.ope.mc_samples.iter().position(|&m| m == 0) {
            return Err(invalid(
                format!("ope.mc_samples[{i}]"),
                "must be at least 1",
            ));
        }
        if self.ope.trials == Some(0) {
            return Err(invalid("ope.trials", "must be at least 1"));
        }
        if self.ope.enabled {
            self.target(inst.n_arms())?;
        }
        let d = &self.diagnose;
        if !(d.delta >= 0.0 && d.delta.is_finite()) {
            return Err(invalid("diagnose.delta", "must be non-negative"));
        }
        if !(d.c > 0.0 && d.c <= 0.25) {
            return Err(invalid(
                "diagnose.c",
                format!(
                    "{} violates the finite-time bound's constraint c in (0, 1/4]",
                    d.c
                ),
            ));
        }
        if d.long_trials == 0 {
            return Err(invalid("diagnose.long_trials", "must be at least 1"));
        }
        if let Some(h) = d.long_horizon {
            if h < k.max(2) {
                return Err(invalid("diagnose.long_horizon", "too short"));
            }
        }
        Ok(())
    }
}
