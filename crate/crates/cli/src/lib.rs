//! Experiment runner: configuration, job scheduling and result files for the
//! `ndr` binary.

pub mod commands;
pub mod config;
pub mod experiment;
pub mod jobs;
pub mod output;

pub use config::ExperimentConfig;
pub use output::ResultRow;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("run failed: {0}")]
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Run(_) => 3,
        }
    }
}

impl From<ndr_core::Error> for CliError {
    fn from(e: ndr_core::Error) -> Self {
        match e {
            ndr_core::Error::Config(m) | ndr_core::Error::InvalidArgument(m) => CliError::Config(m),
            other => CliError::Run(other.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Run(e.to_string())
    }
}
