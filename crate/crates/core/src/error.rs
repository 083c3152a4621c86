use alloc::string::String;

/// Errors raised by the core routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// The inputs are well-formed but not in a state the operation accepts
    /// (for example an unscored candidate).
    #[error("state error: {0}")]
    State(String),
    /// Every response candidate has the same score, so no preference exists.
    #[error("degenerate pair: all {count} candidates share score {score}")]
    DegeneratePair { count: usize, score: f64 },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
