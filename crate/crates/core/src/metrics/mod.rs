//! Run records, diagnostics, rate fits and CSV persistence.

mod analysis;
mod csv_io;
mod eval;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub use analysis::{
    loglog_slope, quantile, samples_to_epsilon, speedup_table, window_mean, Crossing, SlopeFit, SpeedupRow,
};
pub use csv_io::{read_csv, read_csv_from, write_csv, write_csv_to, CSV_HEADER};
pub use eval::{consensus_error, Recorder, RunLabel};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("schema error at column `{column}`: {detail}")]
    Schema { column: String, detail: String },
    #[error("line {line}, column `{column}`: {message}")]
    Parse { line: u64, column: String, message: String },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("non-positive value {value} at t={t}")]
    NonPositiveValue { t: u64, value: f64 },
}

/// One evaluated snapshot of a run.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub run_id: String,
    pub algo: String,
    pub problem: String,
    pub k: usize,
    pub rho: f64,
    pub t: u64,
    /// Oracle queries summed over all agents since the start of the run.
    pub samples_total: u64,
    /// `‖∇F(x̄_t)‖²` through the exact oracle, NaN when unavailable.
    pub grad_norm_sq: f64,
    pub mse_to_opt: f64,
    pub obj_gap: f64,
    pub consensus_x: f64,
    /// One entry per inner level.
    pub consensus_y: Vec<f64>,
    pub wall_ms: u64,
}

fn same_float(a: f64, b: f64) -> bool {
    a == b || (a.is_nan() && b.is_nan())
}

/// Field-wise equality where NaN equals NaN.
impl PartialEq for RunRecord {
    fn eq(&self, o: &Self) -> bool {
        self.run_id == o.run_id
            && self.algo == o.algo
            && self.problem == o.problem
            && self.k == o.k
            && same_float(self.rho, o.rho)
            && self.t == o.t
            && self.samples_total == o.samples_total
            && same_float(self.grad_norm_sq, o.grad_norm_sq)
            && same_float(self.mse_to_opt, o.mse_to_opt)
            && same_float(self.obj_gap, o.obj_gap)
            && same_float(self.consensus_x, o.consensus_x)
            && self.consensus_y.len() == o.consensus_y.len()
            && self.consensus_y.iter().zip(&o.consensus_y).all(|(a, b)| same_float(*a, *b))
            && self.wall_ms == o.wall_ms
    }
}

/// Scalar record columns usable in fits and crossings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Field {
    GradNormSq,
    MseToOpt,
    ObjGap,
    ConsensusX,
}

impl Field {
    pub fn get(self, r: &RunRecord) -> f64 {
        match self {
            Field::GradNormSq => r.grad_norm_sq,
            Field::MseToOpt => r.mse_to_opt,
            Field::ObjGap => r.obj_gap,
            Field::ConsensusX => r.consensus_x,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Field::GradNormSq => "grad_norm_sq",
            Field::MseToOpt => "mse_to_opt",
            Field::ObjGap => "obj_gap",
            Field::ConsensusX => "consensus_x",
        }
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Field {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Field::GradNormSq, Field::MseToOpt, Field::ObjGap, Field::ConsensusX]
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| format!("unknown record field `{s}`"))
    }
}
