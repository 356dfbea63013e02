use std::path::PathBuf;

use sim_core::{CalibrationError, GeometryError, MetricsError, PbdError, SceneError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Toml {
        path: PathBuf,
        source: Box<toml::de::Error>,
    },
    #[error("{path}: {message}")]
    Scenario { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Table {
        path: PathBuf,
        source: csv::Error,
    },
    #[error("{path}: {message}")]
    TableShape { path: PathBuf, message: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl CliError {
    /// Exit status: 2 marks an unstable or non-finite simulation, 1 anything
    /// else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Calibration(CalibrationError::Unstable { .. })
            | CliError::Calibration(CalibrationError::Solver(PbdError::NonFinite { .. })) => 2,
            _ => 1,
        }
    }
}
