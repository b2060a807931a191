use std::path::PathBuf;

/// Crate-wide error type.
///
/// Variants are grouped by failure class so callers (notably the CLI) can map
/// them onto exit codes: configuration/argument problems, data problems
/// (missing or malformed inputs), and numeric failures.
#[derive(thiserror::Error, Debug)]
pub enum Error {
    /// Invalid configuration or parameters.
    #[error("invalid config: {0}")]
    Config(String),

    /// I/O failure with the offending path.
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// An image could not be decoded or encoded.
    #[error("image error on {path}: {message}")]
    Image { path: PathBuf, message: String },

    /// A binary or text artifact violated its documented format.
    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    /// Input data is structurally valid but unusable (empty corpus, missing
    /// frames, mismatched counts, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Numeric failure: singular matrices, non-finite losses, rejected
    /// random sampling.
    #[error("numeric error: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
