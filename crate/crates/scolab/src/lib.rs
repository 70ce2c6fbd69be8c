//! A numerical laboratory for adversarial instances of stochastic convex
//! optimization (SCO).
//!
//! The lab constructs loss functions on the Euclidean unit ball that are
//! convex, O(1)-Lipschitz, and strongly convex in expectation, yet force
//! empirical risk minimizers — and long-horizon projected subgradient
//! descent — to overfit by a margin that does not shrink with the problem
//! dimension. The construction couples three ingredients:
//!
//! * a systematic binary linear code with certified relative distance,
//!   which turns half the coordinates into a "code block" whose population
//!   maxima are pinned by the distance bound ([`code`], [`feldman`]);
//! * a sample-dependent linear term on the remaining "message block" that
//!   lets the empirical objective read off which indices were drawn
//!   ([`instance`]);
//! * a coupling penalty `p(w)` whose maximizer copies the message-block
//!   sign pattern into the code block ([`instance`]).
//!
//! Everything the lab claims is checked twice. Minimizers and gradient
//! descent trajectories have closed forms that the numeric runs must track
//! to tight tolerances ([`erm`], [`gd`]); maxima computed by certificate
//! are replayed against exhaustive enumeration ([`instance`]); population
//! risks carry exact values or certified intervals ([`instance::RiskValue`]);
//! and Monte Carlo sweeps recompute every predicted bound from the measured
//! code distance rather than trusting constants ([`harness`], [`accept`]).
//!
//! The coordinate layout everywhere is `w = (code block, message block)`
//! with `|code block| = 2k` and `|message block| = k`; the feasible set is
//! the unit ball of the concatenated vector ([`param`]).

pub mod accept;
pub mod code;
pub mod config;
pub mod erm;
pub mod feldman;
pub mod gd;
pub mod harness;
pub mod instance;
pub mod param;
pub mod rng;

pub use accept::{run_acceptance, AcceptanceReport, CriterionOutcome};
pub use code::BinaryCode;
pub use config::LabConfig;
pub use erm::ErmSolution;
pub use feldman::FeldmanSpec;
pub use gd::{GdConfig, TrajectoryRecord};
pub use harness::{LabContext, SweepResult, TrialResult};
pub use instance::{HardInstance, InstanceParams, Mode, RiskValue, SampleStats};
pub use param::ParamVector;

/// Umbrella error for context construction and harness-level operations.
#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error(transparent)]
    Param(#[from] param::ParamError),
    #[error(transparent)]
    Code(#[from] code::CodeError),
    #[error(transparent)]
    Feldman(#[from] feldman::FeldmanError),
    #[error(transparent)]
    Instance(#[from] instance::InstanceError),
    #[error(transparent)]
    Gd(#[from] gd::GdError),
    #[error(transparent)]
    Erm(#[from] erm::ErmError),
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("report serialization failed: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv write failed: {0}")]
    Csv(#[from] csv::Error),
}
