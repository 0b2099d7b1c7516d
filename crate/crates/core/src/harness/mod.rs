//! Datasets, experiments, sweeps and the property-inference attack.
//!
//! Everything here drives the protocol engine end to end: load or generate
//! a table, split it vertically between the two clients, run sessions in
//! process, replay their traces over simulated links and write JSON reports.

mod attack;
mod baseline;
mod dataset;
mod experiment;
mod report;
mod sweep;
mod synth;

use std::path::PathBuf;

use thiserror::Error;

use crate::neural::NeuralError;
use crate::protocol::ProtocolError;
use crate::transport::SimError;

pub use attack::{binarize_median, leakage_attack, AttackReport, AttackSetup, LogisticRegression};
pub use baseline::{train_plaintext, BaselineOutcome};
pub use dataset::{load_csv, read_csv, split_train_test, split_vertical, Dataset, SplitSpec, VerticalSplit};
pub use experiment::{
    prepare_session, replay_session, run_experiment, DataSource, DatasetInfo, ExperimentConfig, ExperimentReport,
    LinkBytes, RunReport, RunTiming, Summary,
};
pub use report::{canonical_json, linear_fit, mean_std, LinearFit};
pub use sweep::{bandwidth_sweep, scale_sweep, BandwidthPoint, BandwidthReport, ModeTrace, ScalePoint, ScaleReport};
pub use synth::{generate, write_synthetic, SynthConfig, LABEL_COLUMN};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse { row: usize, column: String, message: String },
    #[error("dataset has no usable rows")]
    EmptyDataset,
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("property column `{0}` is constant")]
    DegenerateProperty(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

impl HarnessError {
    pub(crate) fn io(path: impl Into<PathBuf>, e: impl std::fmt::Display) -> Self {
        HarnessError::Io {
            path: path.into(),
            message: e.to_string(),
        }
    }

    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Parse { .. } => "parse_error",
            HarnessError::EmptyDataset => "empty_dataset",
            HarnessError::InvalidSpec(_) => "invalid_spec",
            HarnessError::DegenerateProperty(_) => "degenerate_property",
            HarnessError::Io { .. } => "io_error",
            HarnessError::Protocol(_) => "protocol_error",
            HarnessError::Neural(_) => "neural_error",
            HarnessError::Sim(_) => "sim_error",
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
