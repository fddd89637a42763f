use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("unsupported format: {0}")]
    Unsupported(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("patch at (top {top}, left {left}, size {size}) exceeds image {width}x{height}")]
    Bounds {
        top: usize,
        left: usize,
        size: usize,
        width: usize,
        height: usize,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("scheme mismatch: {0}")]
    SchemeMismatch(String),

    #[error("line {line}: {msg}")]
    Manifest { line: usize, msg: String },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("missing source image '{0}'")]
    MissingImage(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 for invalid input or configuration, 2 for I/O and numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Numeric(_) => 2,
            _ => 1,
        }
    }
}
