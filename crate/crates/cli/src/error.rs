use thiserror::Error;

/// Errors surfaced by the command-line tool, each with a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("compatibility error: {0}")]
    Compatibility(String),
    #[error("training diverged in stage {stage}: {message}")]
    Diverged { stage: String, message: String },
    #[error("I/O error: {0}")]
    Io(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Compatibility(_) => 3,
            CliError::Diverged { .. } => 4,
            CliError::Io(_) => 5,
            CliError::Other(_) => 1,
        }
    }

    /// Attaches a stage name to a library error.
    pub fn in_stage(stage: &str, err: nullcal::Error) -> Self {
        match err {
            nullcal::Error::TrainingDiverged { .. } => CliError::Diverged {
                stage: stage.to_string(),
                message: err.to_string(),
            },
            other => other.into(),
        }
    }
}

impl From<nullcal::Error> for CliError {
    fn from(err: nullcal::Error) -> Self {
        use nullcal::Error as E;
        match err {
            E::InvalidConfig(_) => CliError::Config(err.to_string()),
            E::Dimension { .. } | E::Compatibility(_) | E::Json(_) => CliError::Compatibility(err.to_string()),
            E::TrainingDiverged { .. } => CliError::Diverged {
                stage: "unknown".into(),
                message: err.to_string(),
            },
            E::Io(_) => CliError::Io(err.to_string()),
            _ => CliError::Other(err.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::Io(err.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
