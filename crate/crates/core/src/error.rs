use std::path::PathBuf;

/// Errors raised anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: expected {expected}, got {actual}")]
    Dimension {
        op: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numeric overflow: {0}")]
    NumericOverflow(String),

    #[error("bad IDX magic in {path}: expected {expected}, found {actual}")]
    Format {
        path: PathBuf,
        expected: u32,
        actual: u32,
    },

    #[error("{path} is truncated: expected {expected} bytes, found {actual}")]
    Length {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("bad snapshot: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(op: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension {
            op,
            expected,
            actual,
        })
    }
}
