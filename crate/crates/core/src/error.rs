use std::fmt;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shape or divisibility violation.
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    /// Degenerate input data (zero scale, non-binary mask, ...).
    #[error("data error: {0}")]
    Data(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    /// NaN/Inf, divergence.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl fmt::Display) -> Self {
        Error::Dimension {
            op,
            detail: detail.to_string(),
        }
    }

    /// Process exit code for the CLI: 2 usage, 3 data/config, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            Error::Numeric(_) => 4,
            Error::Dimension { .. }
            | Error::Config(_)
            | Error::Data(_)
            | Error::EmptyDataset(_)
            | Error::Format(_)
            | Error::Io(_) => 3,
        }
    }
}
