use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("size error: {0}")]
    Size(String),

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("normalization error: {0}")]
    Normalization(String),

    #[error("infeasible sampling spec: {0}")]
    InfeasibleSpec(String),

    #[error("step size error: {0}")]
    StepSize(String),

    #[error("normalization convention mismatch: data is {data}, model expects {model}")]
    Convention { data: String, model: String },

    #[error("reference error: {0}")]
    Reference(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("parse error: {0}")]
    Parse(#[from] ParseError),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Failures while decoding a container or weights file. Each variant names
/// the field or section that violated the format.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },

    #[error("header is not terminated within {limit} bytes")]
    UnterminatedHeader { limit: usize },

    #[error("header is not valid utf-8")]
    NotUtf8,

    #[error("missing field `{0}`")]
    MissingField(&'static str),

    #[error("duplicate field `{0}`")]
    DuplicateField(String),

    #[error("unknown field `{0}`")]
    UnknownField(String),

    #[error("invalid value for `{field}`: {value:?}")]
    InvalidField { field: &'static str, value: String },

    #[error("unsupported format version {0}")]
    UnknownVersion(u32),

    #[error("payload length mismatch in {section}: expected {expected} bytes, found {actual}")]
    LengthMismatch {
        section: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("tensor table: {0}")]
    TensorTable(String),
}

pub(crate) fn size_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Size(msg.into()))
}
