use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shape or axis disagreement between tensors handed to an op.
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// API misuse that is not a shape problem (backward on a detached
    /// tensor, image smaller than a metric window, ...).
    #[error("usage error: {0}")]
    Usage(String),

    #[error("config error: {0}")]
    Config(String),

    /// Non-finite value surfaced where the run must stop (loss, gradient).
    #[error("non-finite {what} at {context}")]
    NonFinite { what: &'static str, context: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Paired-folder ingestion found stems on one side only.
    #[error("unpaired files under {root}: {stems:?}")]
    Unpaired { root: PathBuf, stems: Vec<String> },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {detail}")]
    Image { path: PathBuf, detail: String },
}

impl Error {
    pub fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension { op, detail: detail.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code for the CLI; each failure class gets its own code.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Image { .. } | Error::Unpaired { .. } => 2,
            Error::Config(_) => 3,
            Error::NonFinite { .. } => 4,
            Error::Dimension { .. } | Error::Usage(_) => 5,
            Error::Checkpoint(_) => 6,
        }
    }

    /// Short machine-parsable kind tag used in CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::Usage(_) => "usage",
            Error::Config(_) => "config",
            Error::NonFinite { .. } => "nonfinite",
            Error::Checkpoint(_) => "checkpoint",
            Error::Unpaired { .. } => "unpaired",
            Error::Io { .. } => "io",
            Error::Image { .. } => "image",
        }
    }
}
