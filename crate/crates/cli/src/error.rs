use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{context}: {message}")]
    Run { context: String, message: String },
}

impl CliError {
    pub fn run(context: impl Into<String>, err: impl std::fmt::Display) -> Self {
        Self::Run { context: context.into(), message: err.to_string() }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Usage(_) => "usage",
            Self::Config(_) => "config",
            Self::Run { .. } => "runtime",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) | Self::Config(_) => 2,
            Self::Run { .. } => 1,
        }
    }

    /// One-line machine-readable record.
    pub fn record(&self) -> String {
        #[derive(Serialize)]
        struct Record<'a> {
            error: &'a str,
            message: String,
        }
        serde_json::to_string(&Record { error: self.kind(), message: self.to_string() }).expect("record serializes")
    }
}
