//! Error type shared across the crate.

/// Errors surfaced by library operations.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Operand dimensions do not line up.
    #[error("shape error: {0}")]
    Shape(String),
    /// An argument is outside its valid range.
    #[error("domain error: {0}")]
    Domain(String),
    /// A computation produced a non-finite value.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// A transport plan cannot be used (e.g. a zero row mass).
    #[error("degenerate plan: {0}")]
    DegeneratePlan(String),
    /// The operation was called outside its supported regime.
    #[error("usage error: {0}")]
    Usage(String),
    /// File input/output failure.
    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
