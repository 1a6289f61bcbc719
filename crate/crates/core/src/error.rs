use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("scene generation failed after {attempts} attempts: {reason}")]
    GenerationFailure { attempts: usize, reason: String },

    #[error("obstacles {a} and {b} overlap")]
    Overlap { a: u32, b: u32 },

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("out of calibration range: {0}")]
    OutOfCalibrationRange(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("missing model: {0}")]
    MissingModel(String),

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}
