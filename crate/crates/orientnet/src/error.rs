//! Error types shared by every module.
//!
//! Variants are grouped by how the CLI maps them to exit codes: usage
//! problems (1), data/file problems (2) and numeric failures (3).

use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Caller misuse: bad flag values, out-of-range hyperparameters.
    #[error("usage error: {0}")]
    Usage(String),

    /// Tensor extents that do not line up.
    #[error("shape error: {0}")]
    Shape(String),

    /// Bad input data: labels out of range, malformed manifests.
    #[error("data error: {0}")]
    Data(String),

    /// Not enough samples to satisfy a request.
    #[error("capacity error: {0}")]
    Capacity(String),

    /// NaN or infinite values where finite numbers are required.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(#[from] CheckpointError),

    #[error("decode error in {path}: {kind}")]
    Decode { path: PathBuf, kind: DecodeError },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Checkpoint file failures, one variant per failure mode.
#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("bad magic bytes (expected \"ORNT\")")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("file truncated inside {0}")]
    Truncated(&'static str),
    #[error("trailing bytes after the last tensor")]
    TrailingBytes,
    #[error("tensor for {layer} has {got} values, spec expects {expected}")]
    TensorShape {
        layer: String,
        expected: usize,
        got: usize,
    },
    #[error("malformed specification block: {0}")]
    SpecBlock(String),
}

/// Image decode failures. Byte offsets are reported where the parser
/// knows them (PPM and the EXIF scanner).
#[derive(Debug, thiserror::Error)]
pub enum DecodeError {
    #[error("unknown format (unrecognized signature)")]
    UnknownFormat,
    #[error("corrupt stream at byte {offset}: {detail}")]
    Corrupt { offset: usize, detail: String },
    #[error("corrupt stream: {detail}")]
    CorruptNoOffset { detail: String },
    #[error("unsupported variant: {detail}")]
    Unsupported { detail: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn decode(path: impl Into<PathBuf>, kind: DecodeError) -> Self {
        Error::Decode {
            path: path.into(),
            kind,
        }
    }

    /// Exit-code class used by the CLI: 1 usage, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Numeric(_) => 3,
            _ => 2,
        }
    }
}
