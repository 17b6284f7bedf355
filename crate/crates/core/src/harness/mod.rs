//! Scenarios, experiment protocols, configuration, traces and reports.

pub mod config;
pub mod report;
pub mod run;
pub mod scenario;
pub mod trace;

use thiserror::Error;

pub use config::{ConfigError, WorkcellConfig};
pub use report::{report, Report};
pub use run::{
    calibration_routine, run_scenario, run_scenario_observed, tracking_accuracy_experiment,
    AccuracyResult, AccuracySource, CalibrationOutcome, CalibrationParams,
};
pub use scenario::{Action, RunMode, Scenario, Script};
pub use trace::{RunTrace, TraceSummary};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("scenario error: {0}")]
    Scenario(String),
    #[error("run exceeded its time budget of {budget} s")]
    Timeout { budget: f64, trace: Box<RunTrace> },
    #[error("trace error: {0}")]
    Trace(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
