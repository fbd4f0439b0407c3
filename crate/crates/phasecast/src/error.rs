//! Error type shared across the pipeline.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure is classified into one of five categories. The context
/// string carries enough detail to act on (offending value, file, time of
/// integration failure), so callers rarely need to destructure further.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration: bad ranges, incompatible model/system choices,
    /// unknown keys, exhausted sampling budgets.
    #[error("config error: {0}")]
    Config(String),

    /// Tensor or sequence dimensions that do not line up.
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// Numerical failure: integrator step-size underflow, singular
    /// configurations, non-finite losses where finite values are required.
    #[error("numerics error: {0}")]
    Numerics(String),

    #[error("io error ({context}): {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    /// Malformed or inconsistent persisted data.
    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn numerics(msg: impl Into<String>) -> Self {
        Error::Numerics(msg.into())
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
