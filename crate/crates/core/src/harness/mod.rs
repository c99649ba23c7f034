//! Experiment orchestration: flat-file configuration, prep caching,
//! hyperparameter grid search, sweep drivers, and CSV reports.

mod config;
mod grid;
mod prep;
mod report;
mod run;

pub use config::{parse_config, ExperimentConfig, SweepRetune};
pub use grid::{grid_search, GridAxes, GridOutcome, TrialRow};
pub use prep::{prep_point, text_artifacts, PrepKey, PreparedData, TextArtifacts};
pub use report::{read_results_csv, write_reports, write_summary_tables, ReportPaths, ResultRow};
pub use run::{
    checkpoint_paths, evaluate_checkpoint, run_density_sweep, run_experiment, run_mask_sweep,
    train_and_checkpoint, CheckpointManifest, ExperimentOutput,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("failed to access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error(transparent)]
    Text(#[from] crate::text::TextError),
    #[error(transparent)]
    Model(#[from] crate::models::ModelError),
    #[error(transparent)]
    Ad(#[from] crate::autodiff::AdError),
    #[error("{what} hash mismatch: checkpoint has {expected}, current data has {actual}")]
    HashMismatch {
        what: &'static str,
        expected: String,
        actual: String,
    },
    #[error("every grid trial failed:\n{}", .0.join("\n"))]
    AllTrialsFailed(Vec<String>),
    #[error("bad report file {path}: {reason}")]
    BadReport { path: String, reason: String },
}

impl HarnessError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Process exit code contract: 1 usage, 2 data, 3 divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            HarnessError::Model(crate::models::ModelError::Diverged { .. }) => 3,
            HarnessError::AllTrialsFailed(_) => 3,
            _ => 2,
        }
    }
}

impl From<crate::eval::EvalError> for HarnessError {
    fn from(e: crate::eval::EvalError) -> Self {
        match e {
            crate::eval::EvalError::Corpus(c) => HarnessError::Corpus(c),
            crate::eval::EvalError::Model(m) => HarnessError::Model(m),
            other => HarnessError::Config(other.to_string()),
        }
    }
}
