//! Experiment harness: run configuration, error metrics and seeded replicate runs.

pub mod config;
pub mod metrics;
pub mod runner;

pub use config::{
    preset, presets, AlgorithmConfig, AtaisParams, IlisParams, MhConditionalParams, MinibatchParams, RunConfig,
};
pub use metrics::{mae, mae_sigma, mae_theta, pooled_mae, rounding_consistent, sigma_groundtruth, MaeKind};
pub use runner::{run_experiment, run_single, spec_for, summarize, RunOptions, RunResult, Summary, TrajectoryRow};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("run {run} failed: {source}")]
    Run {
        run: usize,
        #[source]
        source: crate::error::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl ExperimentError {
    /// Process exit code: 2 for configuration problems, 3 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 2,
            _ => 3,
        }
    }
}
