use thiserror::Error;

/// Crate-wide error type.
///
/// Variants are grouped by failure class so the CLI can map them onto its
/// stable exit codes (2 = input/validation, 3 = adapter, 4 = numeric).
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed file contents (wrong magic, missing field, bad header).
    #[error("format error: {0}")]
    Format(String),

    /// Well-formed file carrying invalid values (non-finite floats, bad index).
    #[error("data error: {0}")]
    Data(String),

    /// Input violates a documented invariant (non-orthonormal pose, duplicate id).
    #[error("validation error: {0}")]
    Validation(String),

    /// Arguments outside an operation's domain (non-positive depth, empty mask).
    #[error("domain error: {0}")]
    Domain(String),

    /// Mismatched dimensions between buffers that must agree.
    #[error("shape error: {0}")]
    Shape(String),

    /// Geometry for which the requested quantity is undefined.
    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    /// Numerical failure (singular covariance, overflow to non-finite).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Text that does not match the constrained answer template.
    #[error("parse error: {0}")]
    Parse(String),

    /// Direction word outside the allowed vocabulary.
    #[error("vocabulary error: {0}")]
    Vocabulary(String),

    /// External adapter process failed or produced no usable output.
    #[error("adapter error: {0}")]
    Adapter(String),

    /// External adapter produced output violating its contract.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Bad run configuration.
    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    /// Stable CLI exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Adapter(_) | Error::Contract(_) => 3,
            Error::Numeric(_) | Error::Degenerate(_) => 4,
            _ => 2,
        }
    }
}
