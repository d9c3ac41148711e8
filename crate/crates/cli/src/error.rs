use std::path::Path;

use serde_json::json;

/// A failure reported as `{"error": {"kind", "message"}}` on stderr.
#[derive(Debug)]
pub struct CliError {
    /// Process exit code: 2 for usage and configuration, 1 for data.
    pub code: i32,
    pub kind: String,
    pub message: String,
}

impl CliError {
    pub fn usage(message: String) -> Self {
        Self {
            code: 2,
            kind: "usage".into(),
            message,
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Self {
            code: 1,
            kind: "io".into(),
            message: format!("{}: {err}", path.display()),
        }
    }

    pub fn to_json(&self) -> String {
        json!({"error": {"kind": self.kind, "message": self.message}}).to_string()
    }
}

impl From<swift_core::Error> for CliError {
    fn from(err: swift_core::Error) -> Self {
        let code = if matches!(err, swift_core::Error::Config(_)) { 2 } else { 1 };
        Self {
            code,
            kind: err.kind().into(),
            message: err.to_string(),
        }
    }
}
