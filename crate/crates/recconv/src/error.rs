use thiserror::Error;

/// Errors shared by every module in the crate.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    /// A tensor or kernel was constructed with impossible dimensions.
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    /// Two operands do not agree on the dimensions an operation requires.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// The requested geometry cannot be realised (output would collapse,
    /// target outside the producible extent, input too small for the
    /// decomposition depth, ...).
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    /// A configuration violates one of its invariants.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Caller broke an API contract, e.g. replaying a trace against the
    /// wrong configuration.
    #[error("contract violation: {0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, Error>;
