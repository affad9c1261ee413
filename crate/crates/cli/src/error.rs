//! Harness errors and their process exit codes.

use levy_parametrix::error::Error as CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),

    /// A check ran and failed.
    #[error("validation failed: {0}")]
    Validation(String),

    #[error(transparent)]
    Numeric(#[from] CoreError),

    #[error("I/O error: {0}")]
    Io(String),
}

impl HarnessError {
    /// 1 for bad input or failed checks, 2 for numerical breakdown, 3 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Validation(_) => 1,
            HarnessError::Numeric(e) => match e {
                CoreError::Parameter(_) | CoreError::Domain(_) | CoreError::Taper(_) | CoreError::Mesh(_) | CoreError::Unsupported(_) => 1,
                CoreError::Quadrature { .. } | CoreError::Range { .. } | CoreError::Resolution(_) | CoreError::Divergence(_) => 2,
            },
            HarnessError::Io(_) => 3,
        }
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for HarnessError {
    fn from(e: serde_json::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_error_class() {
        assert_eq!(HarnessError::Config("x".into()).exit_code(), 1);
        assert_eq!(HarnessError::from(CoreError::Divergence("x".into())).exit_code(), 2);
        assert_eq!(HarnessError::from(CoreError::Parameter("x".into())).exit_code(), 1);
        assert_eq!(HarnessError::from(std::io::Error::other("x")).exit_code(), 3);
    }
}
