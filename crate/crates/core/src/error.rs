use alloc::string::String;

/// Errors raised by the numerical core, the environment and the analysis routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },
    #[error("non-finite value encountered in {0}")]
    Numeric(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid usage: {0}")]
    Usage(&'static str),
    #[error("batch of {0} points is too small, need at least 2")]
    BatchSize(usize),
    #[error("statistic is undefined: {0}")]
    Undefined(&'static str),
    #[error("duplicate parameter name `{0}`")]
    DuplicateName(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
