use thiserror::Error;

/// Failure of a command, classified by exit status.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration, invalid input data, or a failed invariant check.
    #[error("{0}")]
    Validation(String),
    /// A file could not be read or written.
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Io(_) => 2,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }
}

impl From<gamma_model::Error> for CliError {
    fn from(e: gamma_model::Error) -> Self {
        match e {
            gamma_model::Error::Io(io) => CliError::Io(io.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Converts a library error, naming `path` when the failure is I/O.
pub fn at_path(e: gamma_model::Error, path: &std::path::Path) -> CliError {
    match e {
        gamma_model::Error::Io(io) => CliError::Io(format!("{}: {io}", path.display())),
        other => CliError::Validation(format!("{}: {other}", path.display())),
    }
}
