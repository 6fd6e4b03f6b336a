//! Configuration, run directories, suites, resumption and exports.
//!
//! A run group directory holds `config.json` (the resolved config),
//! `manifest.json`, `aggregate.csv` and one `seed-<s>/` directory per seed
//! with the metrics, weight histograms, events, summary and checkpoints.

mod aggregate;
mod config;
mod manifest;
mod suite;

pub use aggregate::{aggregate_runs, export_heatmap_data, Aggregate, HeatmapData, AGG_COLUMNS};
pub use config::{
    load_config, parse_config, parse_seeds, ExperimentConfig, Overrides, RunSpec, DEFAULT_SEEDS, PAPER_SCALE_SEEDS,
    PAPER_SCALE_STEPS,
};
pub use manifest::{canonical_json, config_diff, config_hash, RunManifest, SeedRecord, SeedStatus, CODE_VERSION};
pub use suite::{
    matrix_train_config, resume, run_group, run_label, run_single, run_suite, GroupResult, Suite, SuiteReport,
    MATRIX_SCHEMES, MATRIX_SEEDS, PP_SWEEP_PUNISHMENTS, SENSITIVITY_PUNISHMENT, SENSITIVITY_W_MIN,
};

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::env::EnvError;
use crate::oracle::OracleError;
use crate::train::TrainError;
use crate::weighting::WeightError;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Weight(#[from] WeightError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("io error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config hash mismatch in {}:\n{}", dir.display(), diff.join("\n"))]
    HashMismatch { dir: PathBuf, diff: Vec<String> },
    #[error("{failed} of {total} runs failed")]
    RunsFailed { failed: usize, total: usize },
}

impl ExperimentError {
    /// Process exit code: 2 for configuration problems, 1 for anything that
    /// went wrong while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Parse { .. } | Self::Config(_) | Self::Weight(_) | Self::Env(_) | Self::HashMismatch { .. } => 2,
            Self::Train(TrainError::Config(_)) => 2,
            Self::Train(_) | Self::Oracle(_) | Self::Io { .. } | Self::RunsFailed { .. } => 1,
        }
    }
}

pub type Result<T, E = ExperimentError> = std::result::Result<T, E>;

pub(crate) fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}
