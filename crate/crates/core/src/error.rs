use std::path::PathBuf;

/// Errors produced by the fitting and rendering pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at byte offset {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("invalid input format: {0}")]
    Format(String),

    #[error("validation failed for `{field}`: {message}")]
    Validation {
        field: &'static str,
        message: String,
    },

    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("empty sequence: {0}")]
    EmptySequence(&'static str),

    #[error("degenerate model: {0}")]
    DegenerateModel(String),

    #[error("degenerate pose configuration: {0}")]
    DegeneratePose(String),

    #[error("degenerate eye ring in frame {frame}: {message}")]
    DegenerateRing { frame: usize, message: String },

    #[error("invalid image size {width}x{height}")]
    ImageSize { width: u32, height: u32 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn validation(field: &'static str, message: impl Into<String>) -> Self {
        Error::Validation {
            field,
            message: message.into(),
        }
    }

    pub(crate) fn check_len(what: &'static str, expected: usize, actual: usize) -> Result<()> {
        if expected == actual {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                what,
                expected,
                actual,
            })
        }
    }

    /// Broad classification used by front ends to pick exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::DegenerateModel(_)
            | Error::DegeneratePose(_)
            | Error::DegenerateRing { .. }
            | Error::Numerical(_) => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad, missing or inconsistent input data.
    Data,
    /// The numerics could not produce a result (degenerate geometry, singular systems).
    Numerical,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
