use std::fmt;
use std::path::Path;

/// Failure reported as one machine-parseable line:
/// `error: kind=<kind> msg=<message>`.
#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub kind: String,
    pub msg: String,
}

impl CliError {
    pub fn new(kind: impl Into<String>, msg: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            msg: msg.into(),
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Self::new("usage", msg)
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::new("io", format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> u8 {
        if self.kind == "usage" {
            2
        } else {
            1
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let one_line: String = self
            .msg
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ");
        write!(f, "error: kind={} msg={}", self.kind, one_line)
    }
}

impl std::error::Error for CliError {}

impl From<gridpop::Error> for CliError {
    fn from(e: gridpop::Error) -> Self {
        Self::new(e.kind(), e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::new("json", e.to_string())
    }
}
