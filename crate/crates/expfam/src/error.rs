use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Parameter outside the natural parameter space of the family.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// Truncated series evaluation whose tail envelope cannot be controlled.
    #[error("series divergence: {0}")]
    Divergence(String),

    /// Cone ratio undefined because the on-support block vanishes.
    #[error("singular support: {0}")]
    SingularSupport(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("parse error at {path}: {msg}")]
    Parse { path: String, msg: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
