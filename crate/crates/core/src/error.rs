use std::path::PathBuf;

use thiserror::Error;

use crate::morton::MortonCode;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("malformed Morton code {0:#x}")]
    MalformedCode(u64),

    #[error("node {0} is the root and has no parent")]
    NoParent(MortonCode),

    #[error("order violation: {next} does not follow {prev}")]
    OrderViolation { prev: MortonCode, next: MortonCode },

    #[error("front corruption: placeholder {code} does not follow span {tail}")]
    FrontCorruption { code: MortonCode, tail: MortonCode },

    #[error("incomplete stream: {roots} subtree roots remain")]
    IncompleteStream { roots: usize },

    #[error("empty hierarchy: the stream carried no points")]
    EmptyHierarchy,

    #[error("stream already sealed")]
    Sealed,

    #[error("non-finite coordinate in record {index}")]
    NonFinite { index: usize },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("input contains no points")]
    EmptyInput,

    #[error("bad file format: {0}")]
    Format(String),

    #[error("truncated file: expected {expected} records, found {found}")]
    Truncated { expected: u64, found: u64 },

    #[error("hierarchy file is corrupt: {0}")]
    Corrupt(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("builder thread failed: {0}")]
    Worker(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
