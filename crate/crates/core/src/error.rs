use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("hysteresis violation: |c_ferro| = {c_ferro_abs:e} F must exceed c_internal = {c_internal:e} F")]
    HysteresisViolation { c_ferro_abs: f64, c_internal: f64 },

    #[error("invalid capacitance pair: {0}")]
    InvalidCapacitance(String),

    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("gain curve ends at v_gate = 0, average gain undefined")]
    ZeroSpan,

    #[error("invalid gain curve: {0}")]
    InvalidCurve(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("{what} out of range: {value} (allowed 0..{bound})")]
    OutOfRange {
        what: &'static str,
        value: usize,
        bound: usize,
    },

    #[error("invalid technology profile `{name}`: {reason}")]
    InvalidProfile { name: String, reason: String },

    #[error("unknown technology profile `{0}`")]
    UnknownProfile(String),

    #[error("invalid noise configuration: {0}")]
    InvalidNoise(String),

    #[error("invalid experiment configuration: {0}")]
    InvalidConfig(String),

    #[error("noise calibration failed: {0}")]
    Unachievable(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("digest mismatch for {path}: expected {expected}, found {found}")]
    DigestMismatch {
        path: String,
        expected: String,
        found: String,
    },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
