use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum GkdError {
    #[error("dimension mismatch in {op}: expected {expected}, got {got}")]
    Dimension {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid value for `{field}`: {reason}")]
    Validation { field: String, reason: String },

    #[error("parse error in field `{field}`: {reason}")]
    Parse { field: String, reason: String },

    #[error("non-finite value encountered in {0}")]
    Numeric(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl GkdError {
    pub fn dim(op: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        GkdError::Dimension {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        GkdError::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Maps a serde_json failure to a parse error naming the offending field
    /// when serde reports one.
    pub fn from_json(e: serde_json::Error) -> Self {
        let msg = e.to_string();
        let field = msg
            .split('`')
            .nth(1)
            .filter(|_| msg.contains("field"))
            .unwrap_or("document")
            .to_string();
        GkdError::Parse { field, reason: msg }
    }

    pub fn parse(field: impl Into<String>, reason: impl Into<String>) -> Self {
        GkdError::Parse {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = GkdError> = std::result::Result<T, E>;
