use bias_align::Error;

/// Command failure, mapped onto the process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(Error),

    #[error(transparent)]
    Numerical(Error),

    #[error(transparent)]
    Invalid(Error),
}

impl CliError {
    /// 1 configuration or validation, 2 I/O, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Invalid(_) => 1,
            CliError::Io(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Io { .. } => CliError::Io(e),
            Error::Numerical(_) => CliError::Numerical(e),
            other => CliError::Invalid(other),
        }
    }
}
