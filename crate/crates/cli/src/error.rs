use thiserror::Error;

/// Failures of a CLI run, each mapped to a fixed exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("data: {0}")]
    Data(String),
    /// Carries the run summary, printed on stdout.
    #[error("solver did not converge")]
    NotConverged(String),
    /// Carries the value report, printed on stdout.
    #[error("equality check failed")]
    VerifyFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::NotConverged(_) => 3,
            CliError::VerifyFailed(_) => 4,
        }
    }
}

impl From<hkbary::Error> for CliError {
    fn from(e: hkbary::Error) -> Self {
        match e {
            hkbary::Error::InvalidWeights(_) | hkbary::Error::InvalidConfig(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
