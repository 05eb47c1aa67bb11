use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error in `{op}` (operand {value})")]
    Domain { op: &'static str, value: f64 },

    #[error("not found: {0}")]
    NotFound(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_)
            | Error::NotFound(_)
            | Error::Unsupported(_)
            | Error::Schema(_)
            | Error::Csv(_) => 2,
            Error::Domain { .. } | Error::Numerical(_) | Error::Diverged { .. } => 3,
            Error::Io(_) => 2,
        }
    }
}
