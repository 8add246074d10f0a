use std::process::ExitCode;

use hyperq::io::is_validation_error;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] hyperq::Error),
    #[error("solver stopped after {iterations} sweeps without converging (last difference {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("solver differs from the direct solve: MPRE {mpre_pct:e}% exceeds {tol:e}%")]
    OracleMismatch { mpre_pct: f64, tol: f64 },
    #[error("{path}: {source}")]
    File {
        path: String,
        source: std::io::Error,
    },
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Core(hyperq::Error::NotConverged { .. }) | CliError::NotConverged { .. } => 3,
            CliError::Core(e) if is_validation_error(e) => 2,
            CliError::OracleMismatch { .. } => 4,
            _ => 1,
        })
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
