//! Experiment orchestration: data generation, training, benchmark grids,
//! simulate-call counts, context curves and single-episode traces.
//!
//! Every command writes CSV or JSON files and returns the same data in memory.

mod commands;
mod config;
mod run;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use commands::{
    cmd_bench, cmd_count_sims, cmd_eval_context, cmd_gen_data, cmd_plan_episode, cmd_train, BenchOutput, CountRow,
    CountSimsOutput, EpisodeTrace, TraceStep, TrainOutput,
};
pub use config::{
    BlockTemplate, BudgetMode, CalibrationConfig, DataConfig, EvalConfig, ExperimentConfig, HarnessConfig, PlannerSection,
    PnpSection, SimulatorSection,
};
pub use run::{calibrate, run_trial, CalibrationRow, CellSummary, ResultRow, TimingRow, TrialSpec};

use crate::env::EnvError;
use crate::planner::PlannerError;
use crate::pnp::PnpError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error(transparent)]
    Pnp(#[from] PnpError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error("{0}")]
    Runtime(String),
}

impl HarnessError {
    /// Whether the failure is the user's configuration rather than a runtime fault.
    pub fn is_config(&self) -> bool {
        matches!(self, HarnessError::Config(_) | HarnessError::Pnp(PnpError::Config(_)) | HarnessError::Planner(_))
    }

    pub fn exit_code(&self) -> i32 {
        if self.is_config() {
            1
        } else {
            2
        }
    }
}

/// A planner in the benchmark grid. Written `npt`, `pft<n>` (particle count) or `random`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PlannerKind {
    Npt,
    Pft(usize),
    Random,
}

impl fmt::Display for PlannerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlannerKind::Npt => f.write_str("npt"),
            PlannerKind::Pft(n) => write!(f, "pft{n}"),
            PlannerKind::Random => f.write_str("random"),
        }
    }
}

impl FromStr for PlannerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "npt" => Ok(PlannerKind::Npt),
            "random" => Ok(PlannerKind::Random),
            _ => match s.strip_prefix("pft").map(str::parse::<usize>) {
                Some(Ok(n)) if n > 0 => Ok(PlannerKind::Pft(n)),
                _ => Err(format!("unknown planner `{s}` (expected npt, pft<n> or random)")),
            },
        }
    }
}

impl TryFrom<String> for PlannerKind {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<PlannerKind> for String {
    fn from(p: PlannerKind) -> String {
        p.to_string()
    }
}
