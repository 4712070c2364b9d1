use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage error at `{path}`: {message}")]
    Usage { path: String, message: String },

    #[error(transparent)]
    Core(#[from] ladderlab::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn usage(path: &str, message: impl Into<String>) -> Self {
        CliError::Usage {
            path: path.to_owned(),
            message: message.into(),
        }
    }

    /// 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage { .. } => 2,
            _ => 1,
        }
    }
}
