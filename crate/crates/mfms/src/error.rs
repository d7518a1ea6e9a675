use thiserror::Error;

/// Errors produced by the optimization, simulation, and IO layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("budget exhausted: evaluation needs {needed} cost units, {remaining} remaining")]
    BudgetExhausted { needed: f64, remaining: f64 },

    /// Linear-algebra breakage that survived every jitter escalation.
    #[error("numeric failure: {message} (attempted jitter levels: {attempted_jitter:?})")]
    NumericFailure {
        message: String,
        attempted_jitter: Vec<f64>,
    },

    #[error("resource limit: {0}")]
    ResourceLimit(String),

    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("validation error at row {row}: {message}")]
    Validation { row: usize, message: String },

    #[error("simulator failure for {config}: {message}")]
    Simulator { config: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
