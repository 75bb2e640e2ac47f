use std::path::PathBuf;

/// Unified error type for the toolkit.
///
/// Variants are grouped by how the CLI maps them to exit codes:
/// usage and I/O problems exit with 2, computational failures with 1.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs} and {rhs}")]
    ShapeMismatch {
        op: &'static str,
        lhs: String,
        rhs: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid label {label} for model with {classes} classes")]
    InvalidLabel { label: usize, classes: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("image decode failed for {path}: {message}")]
    ImageDecode { path: PathBuf, message: String },

    #[error("mask pixel at ({x}, {y}) with rgba {rgba:?} is outside tolerance {tolerance} of every color anchor")]
    MaskPixel {
        x: u32,
        y: u32,
        rgba: [u8; 4],
        tolerance: u8,
    },

    #[error("manifest record {index} ({path}): file not found")]
    MissingFile { index: usize, path: PathBuf },

    #[error("manifest record {index} duplicates image path {path}")]
    DuplicateRecord { index: usize, path: PathBuf },

    #[error("merge map entry '{name}' does not match any class in the manifest")]
    UnknownMergeClass { name: String },

    #[error("class '{name}' has only {count} sample(s); stratified split needs at least 2")]
    ClassTooSmall { name: String, count: usize },
}

impl Error {
    /// Exit code the CLI should use for this error: 2 for usage/IO, 1 for
    /// computational failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. }
            | Error::Format { .. }
            | Error::ImageDecode { .. }
            | Error::MissingFile { .. }
            | Error::DuplicateRecord { .. }
            | Error::UnknownMergeClass { .. }
            | Error::InvalidArgument(_) => 2,
            _ => 1,
        }
    }

    pub(crate) fn invalid_argument(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }

    pub(crate) fn shape_mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            lhs: format!("{lhs:?}"),
            rhs: format!("{rhs:?}"),
        }
    }

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

pub type Result<T> = std::result::Result<T, Error>;
