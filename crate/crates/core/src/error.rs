use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid environment: {0}")]
    InvalidEnvironment(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// The reward-recovery system was not solved to tolerance.
    #[error("linear system inconsistent: residual {residual:e} exceeds {tolerance:e}")]
    ConsistencyFailure { residual: f64, tolerance: f64 },

    #[error("training failure: {0}")]
    TrainingFailure(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("could not parse reflector reply: {message}")]
    Parse { message: String, raw: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("load error: {0}")]
    Load(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn invalid_arg(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
