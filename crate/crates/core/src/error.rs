use thiserror::Error;

/// Unified error type for the whole workbench.
///
/// Every variant maps to a stable machine-parsable category string so the CLI
/// can emit `error: [category] message` lines and pick exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("graph misuse: {0}")]
    Graph(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    /// Stable category tag used in CLI error lines and exit-code mapping.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Config(_) => "config",
            Error::Graph(_) => "graph",
            Error::NonFinite(_) => "numeric",
            Error::Data(_) => "data",
            Error::Checkpoint(_) => "checkpoint",
            Error::Usage(_) => "usage",
            Error::Io(_) => "io",
            Error::Image(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
