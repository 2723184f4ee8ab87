use std::path::Path;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {message}")]
    Io { path: String, message: String },

    #[error(transparent)]
    Core(#[from] cellflow::Error),

    #[error("output {file} does not belong to this run: {reason}")]
    Orphan { file: String, reason: String },

    #[error("malformed output {file}: {message}")]
    Format { file: String, message: String },
}

pub type Result<T> = std::result::Result<T, HarnessError>;

impl HarnessError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Self::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        use cellflow::Error as E;
        match self {
            Self::Config(_) => 2,
            Self::Io { .. } => 3,
            Self::Core(E::NonConvergence { .. } | E::Factorization(_)) => 4,
            Self::Core(E::ProbeTimeout { .. }) => 5,
            Self::Core(E::InvalidParameter(_) | E::OutsideCornerChart { .. }) => 6,
            Self::Core(E::InsufficientData(_)) => 7,
            Self::Orphan { .. } | Self::Format { .. } => 8,
        }
    }

    /// Short stable name of the error class.
    pub fn code_name(&self) -> &'static str {
        use cellflow::Error as E;
        match self {
            Self::Config(_) => "config",
            Self::Io { .. } => "io",
            Self::Core(E::NonConvergence { .. } | E::Factorization(_)) => "solver_nonconvergence",
            Self::Core(E::ProbeTimeout { .. }) => "probe_timeout",
            Self::Core(E::InvalidParameter(_) | E::OutsideCornerChart { .. }) => "invalid_parameter",
            Self::Core(E::InsufficientData(_)) => "insufficient_data",
            Self::Orphan { .. } => "orphan_output",
            Self::Format { .. } => "malformed_output",
        }
    }

    pub fn record(&self) -> ErrorRecord {
        ErrorRecord {
            error: self.code_name(),
            exit_code: self.exit_code(),
            message: self.to_string(),
        }
    }
}

/// Machine-readable error report.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorRecord {
    pub error: &'static str,
    pub exit_code: i32,
    pub message: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_are_distinct() {
        let errs = [
            HarnessError::Config("x".into()),
            HarnessError::io(Path::new("a"), "b"),
            cellflow::Error::NonConvergence { iterations: 1, residual: 1.0 }.into(),
            cellflow::Error::ProbeTimeout { cap: 1.0 }.into(),
            cellflow::Error::InvalidParameter("p".into()).into(),
            cellflow::Error::InsufficientData("d".into()).into(),
            HarnessError::Orphan {
                file: "f".into(),
                reason: "r".into(),
            },
        ];
        let mut codes: Vec<i32> = errs.iter().map(|e| e.exit_code()).collect();
        assert!(codes.iter().all(|c| *c != 0));
        codes.sort();
        codes.dedup();
        assert_eq!(codes.len(), errs.len());
        let json = serde_json::to_string(&errs[3].record()).unwrap();
        assert!(json.contains("\"error\":\"probe_timeout\""));
    }
}
