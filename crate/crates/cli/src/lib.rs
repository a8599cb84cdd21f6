//! Batch front end for gtomo: configuration, state specs, reconstruction
//! runs, frame verification and artifact files.

pub mod artifacts;
pub mod config;
pub mod pipeline;
pub mod state;

use std::io;

use gtomo_core::TomoError;
use thiserror::Error;

pub use config::{ExperimentConfig, Plan, Scheme};
pub use pipeline::{ingest, run, verify_frame, Outcome};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Tomo(#[from] TomoError),

    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn io(path: impl std::fmt::Display, source: io::Error) -> Self {
        CliError::Io { path: path.to_string(), source }
    }

    /// 2 for invalid input, 3 for numerical failure, 1 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Json(_) => 2,
            CliError::Io { .. } => 1,
            CliError::Tomo(e) => match e {
                TomoError::IllConditioned { .. }
                | TomoError::MassDeficit { .. }
                | TomoError::NonFinite { .. }
                | TomoError::NotHermitian { .. }
                | TomoError::InvalidDensity(_)
                | TomoError::ZeroNorm => 3,
                _ => 2,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
