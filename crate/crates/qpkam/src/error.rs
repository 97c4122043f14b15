use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid field: {0}")]
    InvalidField(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("nonzero zero-mode: {0}")]
    ZeroMode(String),
    #[error("small divisor at {0}")]
    SmallDivisor(String),
    #[error("diffeomorphism not invertible: {0}")]
    NotInvertible(String),
    #[error("diverging expansion: {0}")]
    Divergence(String),
    #[error("Melnikov condition violated at {count} indices, first {first}")]
    MelnikovViolation { count: usize, first: String },
    #[error("twist matrix is degenerate: {0}")]
    TwistDegenerate(String),
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("frequency is not Diophantine: {0}")]
    NotDiophantine(String),
    #[error("structure violation: {0}")]
    Structure(String),
    #[error("smallness gate failed: {0}")]
    Gate(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("computation aborted: {0}")]
    Abort(String),
}

pub type Result<T> = std::result::Result<T, Error>;
