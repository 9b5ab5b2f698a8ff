//! Experiment orchestration: configs, baselines, N sweeps and result files.

pub mod baselines;
pub mod config;
pub mod experiment;
pub mod verify;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl From<seqmetro_core::error::Error> for CliError {
    fn from(e: seqmetro_core::error::Error) -> Self {
        use seqmetro_core::error::Error as E;
        match e {
            E::Io(e) => CliError::Io(e.to_string()),
            E::Json(e) => CliError::Io(e.to_string()),
            E::Checkpoint(msg) => CliError::Config(msg),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
