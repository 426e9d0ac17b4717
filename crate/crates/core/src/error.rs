use thiserror::Error;

/// Errors raised by the optimizer library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid layered vector: {0}")]
    InvalidVector(String),
    #[error("infeasible sampling constraints: {0}")]
    Infeasible(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("empty active set")]
    EmptyActiveSet,
    #[error("projection did not converge after {iterations} iterations (residual {residual:e})")]
    ProjectionDiverged { iterations: usize, residual: f64 },
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("layer {0} sampled without a stashed gradient")]
    MissingStash(usize),
    #[error("idx format: {0}")]
    Idx(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
