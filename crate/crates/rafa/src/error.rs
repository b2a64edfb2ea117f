use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible tensor shapes; the message names both shapes.
    #[error("dimension mismatch in {op}: {lhs} vs {rhs}")]
    Dimension {
        op: &'static str,
        lhs: String,
        rhs: String,
    },

    /// Caller violated an operation's contract.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid configuration, rejected before any work starts.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed file contents (checkpoint, PPM, feature file).
    #[error("format error: {0}")]
    Format(String),

    /// Bad dataset manifest entry.
    #[error("manifest error: {0}")]
    Manifest(String),

    /// Non-finite values showed up where they must not.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn fmt_shape(shape: &[usize]) -> String {
    if shape.is_empty() {
        return "scalar".to_string();
    }
    shape
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("x")
}

pub(crate) fn dim_error(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Dimension {
        op,
        lhs: fmt_shape(lhs),
        rhs: fmt_shape(rhs),
    }
}
