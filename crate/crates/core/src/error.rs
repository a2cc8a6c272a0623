use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlockError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("phi = inf is only supported by the two-state contact mode")]
    InfinitePhi,
    #[error("invalid initial configuration: {0}")]
    InvalidInit(String),
    #[error("time horizon must be positive, got {0}")]
    InvalidHorizon(f64),
    #[error("threshold hypothesis not met: m = {m} (requires m < 1)")]
    NotSubcritical { m: f64 },
    #[error("bracket [{low}, {high}] does not straddle the transition: {reason}")]
    Bracket {
        low: f64,
        high: f64,
        reason: String,
    },
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for FlockError {
    fn from(e: std::io::Error) -> Self {
        FlockError::Io(e.to_string())
    }
}

impl From<csv::Error> for FlockError {
    fn from(e: csv::Error) -> Self {
        FlockError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for FlockError {
    fn from(e: serde_json::Error) -> Self {
        FlockError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, FlockError>;
