use std::fmt;

use multiko_core::simulate::StageError;
use multiko_core::Error as CoreError;

/// CLI failure classes; each maps to its own exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Io(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("solver did not converge: {0}")]
    NonConvergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::NonConvergence(_) => 5,
        }
    }

    pub fn io(context: impl fmt::Display, err: impl fmt::Display) -> Self {
        CliError::Io(format!("{context}: {err}"))
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::Input(_) => CliError::Io(msg),
            CoreError::Dimension(_) | CoreError::Parameter(_) => CliError::Config(msg),
            CoreError::NonConvergence { .. } => CliError::NonConvergence(msg),
            CoreError::NotPsd { .. }
            | CoreError::Construction(_)
            | CoreError::NoExtensionNeeded { .. }
            | CoreError::CannotEstimateSigma { .. }
            | CoreError::DegenerateGrid => CliError::Numerical(msg),
        }
    }
}

impl From<StageError> for CliError {
    fn from(e: StageError) -> Self {
        let msg = e.to_string();
        match CliError::from(e.error) {
            CliError::Config(_) => CliError::Config(msg),
            CliError::Io(_) => CliError::Io(msg),
            CliError::Numerical(_) => CliError::Numerical(msg),
            CliError::NonConvergence(_) => CliError::NonConvergence(msg),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
