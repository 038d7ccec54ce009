//! Error types shared across the crate.

/// Errors produced by tensor algebra, model evaluation, and training.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    /// Operand extents disagree with each other or with a spec.
    #[error("shape error: {0}")]
    Shape(String),
    /// A contraction spec or layer spec is malformed.
    #[error("spec error: {0}")]
    Spec(String),
    /// Matrix inversion failed; carries a crude condition estimate.
    #[error("singular matrix (condition estimate {cond:.3e})")]
    Singular { cond: f64 },
    /// A computation produced NaN or infinity.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },
    /// Invalid run or training configuration.
    #[error("config error: {0}")]
    Config(String),
    /// Dataset ingestion failure with a 1-based line number.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    /// Training aborted; names the loss component that first failed.
    #[error("training error in `{component}`: {msg}")]
    Training { component: String, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn spec(msg: impl Into<String>) -> Self {
        Error::Spec(msg.into())
    }
}
