//! DSMO and the two double-loop baselines.
//!
//! All three drivers share the same conventions: agents start at zero, a round
//! is a synchronization barrier, every read inside a round refers to the
//! time-`t` snapshot, and randomness comes from counter-based per-agent
//! streams so results do not depend on how agents are scheduled on threads.

mod baselines;
mod dsmo;
mod neumann;
mod schedule;
mod streams;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub use baselines::{run_dbsa, run_dsgd, DbsaOptions, DsgdOptions, InnerWeights};
pub use dsmo::{dsmo_round, run_dsmo, AgentState, DsmoState, LevelState, RoundContext, RoundOutput};
pub use neumann::{neumann_apply, neumann_matrix};
pub use schedule::{neumann_depth, schedule_at, BRule, Regime, StepSchedule, Steps};
pub use streams::{Slot, Streams};

use crate::network::NetworkError;
use crate::problems::ProblemError;

#[derive(Debug, Error)]
pub enum AlgoError {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("algorithm needs a bilevel problem, got {levels} inner levels")]
    NotBilevel { levels: usize },
    #[error("problem `{0}` has no compositional value/Jacobian split")]
    NotCompositional(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Dsmo,
    Dbsa,
    Dsgd,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Dsmo => "dsmo",
            Algorithm::Dbsa => "dbsa",
            Algorithm::Dsgd => "dsgd",
        })
    }
}

impl FromStr for Algorithm {
    type Err = AlgoError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dsmo" => Ok(Algorithm::Dsmo),
            "dbsa" => Ok(Algorithm::Dbsa),
            "dsgd" => Ok(Algorithm::Dsgd),
            other => Err(AlgoError::InvalidParam(format!("unknown algorithm `{other}`"))),
        }
    }
}

/// Run-level knobs shared by every driver.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    /// Number of rounds `T`.
    pub horizon: usize,
    pub seed: u64,
    /// Record cadence; `None` means `max(1, T / 500)`.
    pub eval_every: Option<usize>,
    pub run_id: String,
    /// Draw `∇₁f` and `∇₂f` from two independent samples instead of one.
    pub independent_outer_draws: bool,
    /// Store elapsed milliseconds in records. Off by default so that reruns
    /// produce byte-identical output.
    pub record_wall_ms: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            horizon: 1000,
            seed: 0,
            eval_every: None,
            run_id: "run_0".into(),
            independent_outer_draws: false,
            record_wall_ms: false,
        }
    }
}

impl RunOptions {
    pub fn cadence(&self) -> usize {
        self.eval_every.unwrap_or((self.horizon / 500).max(1)).max(1)
    }

    /// Whether a record is due after `done` completed rounds.
    pub(crate) fn due(&self, done: usize) -> bool {
        done == self.horizon || done.is_multiple_of(self.cadence())
    }
}
