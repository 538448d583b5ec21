use thiserror::Error;

/// Errors raised by the control library and the scenario runner.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),

    #[error("ill-conditioned model: {0}")]
    IllConditioned(String),

    #[error("invalid covariance: {0}")]
    InvalidCovariance(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("qp infeasible")]
    Infeasible,

    #[error("config error: {0}")]
    Config(String),

    #[error("missing data: {0}")]
    MissingData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
