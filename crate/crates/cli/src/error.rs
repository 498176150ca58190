use std::path::PathBuf;
use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] ncalg::Error),

    #[error("{path}:{line}: {message}")]
    Config {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid override `{0}`: expected key=value")]
    Override(String),

    #[error("invalid configuration: {0}")]
    Schema(String),

    #[error("stability bound violated (lhs/rhs at smallest epsilon {tightness:.4e})")]
    Violated { tightness: f64 },

    #[error("stability check inconclusive: non-finite deviation or bound")]
    Inconclusive,
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        let code = match self {
            CliError::Core(ncalg::Error::NonConvergence(_)) | CliError::Inconclusive => 3,
            CliError::Core(ncalg::Error::Divergence { .. }) => 5,
            CliError::Violated { .. } => 4,
            _ => 2,
        };
        ExitCode::from(code)
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
