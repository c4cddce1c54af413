//! KL Maillard sampling and baseline bandit policies on `[0, 1]` rewards,
//! with exact action probabilities, a seeded regret simulator and
//! inverse-propensity-weighted offline evaluation of the logged data.

pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod envs;
pub mod klmath;
pub mod ope;
pub mod policies;
pub mod rng;
pub mod simulate;
pub mod svg;

pub use envs::{ArmDistribution, BanditInstance, InstanceSummary};
pub use klmath::{binary_kl, Divergence, ProbValue};
pub use policies::{ActionDraw, ArmStats, PolicyConfig, PolicyKind, PolicyState, Propensity};
pub use simulate::{BatchOptions, BatchResult, LoggedStep, RegretCurve, TrialLog};
