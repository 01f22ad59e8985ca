use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// An input violated an operation's precondition.
    #[error("domain error: {0}")]
    Domain(String),

    /// A numerical routine failed (singular system, non-finite value).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// A corpus or manifest record is malformed.
    #[error("invalid record {index} in {path}: {reason}")]
    Record {
        path: PathBuf,
        index: usize,
        reason: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("config: {0}")]
    Config(String),

    /// Training stopped inside a round.
    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("plot: {0}")]
    Plot(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Numerical(_) => "numerical",
            Error::Record { .. } => "record",
            Error::Io { .. } => "io",
            Error::Image { .. } => "image",
            Error::Config(_) => "config",
            Error::Round { source, .. } => source.kind(),
            Error::Plot(_) => "plot",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
