use std::io;

use ecat_runtime::RuntimeError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("symbol {symbol} outside alphabet [{min}, {max}]")]
    OutOfAlphabet { symbol: i32, min: i32, max: i32 },
    #[error("empty alphabet")]
    EmptyAlphabet,
    #[error("truncated stream: {0}")]
    Truncated(&'static str),
    #[error("corrupt stream: {0}")]
    Corrupt(String),
    #[error("bad bitstream header: {0}")]
    Header(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("malformed PPM: {0}")]
    Ppm(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

impl CodecError {
    pub fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Self::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for filesystem failures, as opposed to contract violations.
    pub fn is_io(&self) -> bool {
        matches!(self, Self::Io { .. })
    }
}

pub type Result<T, E = CodecError> = std::result::Result<T, E>;
