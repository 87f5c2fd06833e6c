use thiserror::Error;

/// Errors surfaced by protocol training, calibration, and simulation.
#[derive(Debug, Error)]
pub enum SvipError {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("verification stack inconsistency: {0}")]
    StackMismatch(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-identifiable estimation problem: {0}")]
    NonIdentifiable(String),

    #[error("serialization error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SvipError>;

impl SvipError {
    pub fn shape(context: impl Into<String>, expected: impl std::fmt::Display, actual: impl std::fmt::Display) -> Self {
        SvipError::ShapeMismatch {
            context: context.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// Process exit code used by the CLI: config problems map to 2,
    /// stack inconsistencies to 3, everything else to 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            SvipError::Config(_) => 2,
            SvipError::StackMismatch(_) => 3,
            _ => 1,
        }
    }
}
