use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("index {index} out of range for table of length {len}")]
    Index { index: u64, len: usize },

    #[error("argument error: {0}")]
    Argument(String),

    #[error("horizon {horizon} too small: partial sum {partial} never reached target {target}")]
    HorizonTooSmall { horizon: u64, partial: f64, target: f64 },

    #[error("step-size violation at n = {n}: alpha * T_n = {value} exceeds 1")]
    StepSize { n: usize, value: f64 },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("chain structure check failed: {0}")]
    Structure(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("profile does not mix (tau_rate = {0})")]
    NonMixing(f64),

    #[error("unsupported: {0}")]
    Capability(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
