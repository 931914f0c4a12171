use std::process::ExitCode;

/// Failures grouped by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad config, input file or argument (exit 1).
    #[error("{0}")]
    User(String),
    /// Numerical breakdown during a run (exit 2).
    #[error("{0}")]
    Numeric(String),
    /// An oracle check failed (exit 3).
    #[error("{0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::User(_) => 1,
            CliError::Numeric(_) => 2,
            CliError::Verification(_) => 3,
        })
    }

    pub fn context(self, what: &str) -> Self {
        match self {
            CliError::User(m) => CliError::User(format!("{what}: {m}")),
            CliError::Numeric(m) => CliError::Numeric(format!("{what}: {m}")),
            CliError::Verification(m) => CliError::Verification(format!("{what}: {m}")),
        }
    }
}

impl From<slogan_core::Error> for CliError {
    fn from(e: slogan_core::Error) -> Self {
        if e.is_numeric() {
            CliError::Numeric(e.to_string())
        } else {
            CliError::User(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::User(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::User(e.to_string())
    }
}
