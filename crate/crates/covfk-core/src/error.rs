use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("series did not converge after {terms} terms (achieved bound {bound:e})")]
    Convergence { terms: usize, bound: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("unsupported coefficient: {0}")]
    Unsupported(String),

    #[error("non-finite sample encountered on path {path}")]
    NonFinite { path: usize },

    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
