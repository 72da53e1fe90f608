//! Configuration, study drivers and verification suites for the `vmsweep` binary.

pub mod config;
pub mod output;
pub mod studies;
pub mod verify;

use thiserror::Error;
use vmsweep::fem::FemError;
use vmsweep::stepper::StepError;

pub use config::{load_config, parse_config, ConfigError, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Step(#[from] StepError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// Process exit status: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}
