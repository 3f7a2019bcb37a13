use thiserror::Error;

/// Errors raised by the design and evaluation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("matrix is not positive semidefinite: smallest eigenvalue {min_eig:e} below tolerance -{tol:e}")]
    NotPsd { min_eig: f64, tol: f64 },

    /// Position-space FIM too ill-conditioned to invert meaningfully.
    #[error("unidentifiable geometry: equilibrated FIM condition number {0:e} exceeds 1e12")]
    Unidentifiable(f64),

    #[error("degenerate extraction: {0}")]
    DegenerateExtraction(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("problem too large: {vars} scalar variables exceeds the limit of {limit}")]
    TooLarge { vars: usize, limit: usize },

    #[error("internal inconsistency: {0}")]
    Internal(String),

    /// Scenario file failed to parse or validate; `pointer` is a JSON pointer.
    #[error("schema violation at {pointer}: {message}")]
    Schema { pointer: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
