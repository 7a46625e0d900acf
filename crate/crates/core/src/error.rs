use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("gradient requires a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),

    #[error("node {wrt} is not reachable from output node {output}")]
    Unreachable { output: usize, wrt: usize },

    #[error("gradient was computed with retain=false; re-run gradient with retain=true before taking a Hessian-vector product")]
    NotRetained,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{loss} loss requires {what}")]
    MissingInput {
        loss: &'static str,
        what: &'static str,
    },

    #[error("dimension {dim} exceeds the exact-trace limit of {limit}; use the sliced (ssm) loss instead")]
    TraceLimit { dim: usize, limit: usize },

    #[error("sampler diverged at step {step}: {reason}")]
    Diverged { step: usize, reason: String },

    #[error("non-finite loss at training step {step}")]
    NonFiniteLoss { step: usize },

    #[error("incompatible configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Csv {
        path: String,
        line: u64,
        message: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for errors caused by numerical blow-up rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. } | Error::Diverged { .. } | Error::NonFiniteLoss { .. }
        )
    }
}
