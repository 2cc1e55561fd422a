use thiserror::Error;

/// Errors produced by the simulation, clustering, planning and tree code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("degenerate objective: every candidate scored -inf")]
    DegenerateObjective,
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("unknown environment id {0}")]
    UnknownEnv(u32),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("missing field: {0}")]
    MissingField(String),
}

pub type Result<T> = std::result::Result<T, Error>;
