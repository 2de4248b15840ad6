use thiserror::Error;

/// Errors raised across the library.
///
/// The variants fall into three families that the CLI maps onto exit codes:
/// configuration problems, bad input data, and numeric failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("autodiff: {0}")]
    Graph(String),

    #[error("non-finite {kind} loss {value} at epoch {epoch}, batch {batch}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        kind: String,
        value: f64,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::Graph(_) | Error::Shape { .. })
    }

    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
