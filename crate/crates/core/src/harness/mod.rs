//! File formats, synthetic fixtures and the end-to-end pipeline behind the CLI.

pub mod corpus;
pub mod embed;
pub mod io;
pub mod pipeline;
pub mod synthetic;

use std::path::PathBuf;

use thiserror::Error;

use crate::calibration::CalibrationError;
use crate::cascade::CascadeError;
use crate::classifier::ClassifierError;
use crate::cost::CostError;
use crate::fingerprint::FingerprintError;
use crate::metrics::MetricsError;
use crate::model::ModelError;
use crate::risk::RiskError;

/// Process exit codes used by the CLI.
pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const VALIDATION: i32 = 2;
    pub const INFEASIBLE: i32 = 3;
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("no threshold certified at alpha={alpha}, delta={delta}")]
    Infeasible { alpha: f64, delta: f64 },
    #[error("stage {stage}: {source}")]
    Stage { stage: &'static str, source: Box<HarnessError> },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Fingerprint(#[from] FingerprintError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Cascade(#[from] CascadeError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Cost(#[from] CostError),
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.into(), source }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        HarnessError::Stage { stage, source: Box::new(self) }
    }

    /// Stage name when the error was raised inside the pipeline.
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            HarnessError::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Stage { source, .. } => source.exit_code(),
            HarnessError::Infeasible { .. } => exit::INFEASIBLE,
            HarnessError::Io { .. }
            | HarnessError::Cascade(CascadeError::Io(_))
            | HarnessError::Cost(CostError::Io(_)) => exit::FAILURE,
            _ => exit::VALIDATION,
        }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
