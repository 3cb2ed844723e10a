use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in op #{op} ({kind}): {detail}")]
    Shape {
        op: usize,
        kind: &'static str,
        detail: String,
    },
    #[error("log of non-positive value {value} in op #{op}; clamp before taking the log")]
    NonPositiveLog { op: usize, value: f64 },
    #[error("backward needs a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("unknown tape input `{0}`")]
    UnknownInput(String),
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("choice group has no active candidates")]
    EmptyGroup,
    #[error("unknown auxiliary loss kind `{0}`")]
    UnknownAuxKind(String),
    #[error("exponent m must be positive, got {0}")]
    InvalidExponent(f64),
    #[error("spatial factor {spatial} does not divide length {length}")]
    Indivisible { spatial: usize, length: usize },
    #[error("space has {count} architectures, above the enumeration cap of {cap}")]
    EnumerationCap { count: String, cap: usize },
    #[error("non-finite {what} at epoch {epoch}, step {step}")]
    NonFinite {
        what: &'static str,
        epoch: usize,
        step: usize,
    },
    #[error("architecture does not fit the space: {0}")]
    InvalidArchitecture(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
