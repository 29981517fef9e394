use paramequiv::Error;
use thiserror::Error as ThisError;

/// Failures grouped by process exit code.
#[derive(Debug, ThisError)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numeric(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Numeric(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Io { .. } => CliError::Io(msg),
            Error::NonFinite { .. } | Error::DegeneratePlane | Error::NegativeLoss(_) => CliError::Numeric(msg),
            Error::InsufficientIndependent { .. } => CliError::Numeric(format!(
                "{msg}; run `search` with more starts (search.num_starts) or a larger step budget"
            )),
            _ => CliError::Usage(msg),
        }
    }
}
