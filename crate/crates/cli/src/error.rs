use sir_iss_core::Error as CoreError;

/// Failure of a subcommand, carrying its exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    /// The chosen theorem's hypothesis does not hold.
    #[error("{0}")]
    Regime(String),

    #[error("{failed} of {total} checks failed")]
    ChecksFailed { failed: usize, total: usize },

    #[error(transparent)]
    Core(CoreError),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Regime(_) | CoreError::R0NotAboveOne { .. } => CliError::Regime(e.to_string()),
            CoreError::InvalidParams(_) | CoreError::InfeasibleOverride(_) => CliError::Config(e.to_string()),
            other => CliError::Core(other),
        }
    }
}

impl CliError {
    /// 0 success, 1 config or runtime error, 2 regime, 3 failed checks.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Regime(_) => 2,
            CliError::ChecksFailed { .. } => 3,
            _ => 1,
        }
    }
}
