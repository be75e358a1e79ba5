use thiserror::Error;

/// Errors raised by the search engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("numeric fault in {0}: non-finite value")]
    NumericFault(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("genome does not match search space: {0}")]
    SpecMismatch(String),

    #[error("malformed genome text at line {line}: {message}")]
    Malformed { line: usize, message: String },

    #[error("index out of range at decision {decision}: {message}")]
    Range { decision: usize, message: String },

    #[error("unknown operation `{0}`")]
    UnknownOp(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
