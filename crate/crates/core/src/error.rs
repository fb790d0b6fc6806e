use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("hash mismatch for {what}: expected {expected:016x}, got {got:016x}")]
    HashMismatch {
        what: &'static str,
        expected: u64,
        got: u64,
    },
    #[error("bad file format: {0}")]
    Format(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("no valid points: {0}")]
    NoValidPoints(String),
}

pub type Result<T> = std::result::Result<T, Error>;
