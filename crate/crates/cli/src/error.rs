use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config keys or input files.
    #[error("{0}")]
    Usage(String),

    /// The run completed but a gated metric missed its threshold.
    #[error("threshold failure: {}", .0.join(", "))]
    Threshold(Vec<String>),

    #[error(transparent)]
    Core(#[from] ebmlab_core::Error),

    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Threshold(_) => 1,
            CliError::Core(e) if e.is_numerical() => 3,
            CliError::Usage(_) | CliError::Core(_) | CliError::Io { .. } => 2,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
