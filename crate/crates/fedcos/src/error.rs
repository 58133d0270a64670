//! Crate-wide error type.

use std::path::Path;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected length {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("{path}: malformed data at byte {offset}: {reason}")]
    Format {
        path: String,
        offset: usize,
        reason: String,
    },

    #[error("config error: {key}: {reason}")]
    Config { key: String, reason: String },

    #[error("partition spec infeasible: {constraint}")]
    Partition { constraint: String },

    #[error("aggregation requires at least one client update")]
    EmptyAggregation,

    #[error("{}parameters diverged at local step {step}", divergence_site(*round, *client))]
    Divergence {
        round: Option<usize>,
        client: Option<usize>,
        step: usize,
    },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn divergence_site(round: Option<usize>, client: Option<usize>) -> String {
    match (round, client) {
        (Some(r), Some(c)) => format!("client {c} at round {r}: "),
        (Some(r), None) => format!("round {r}: "),
        (None, Some(c)) => format!("client {c}: "),
        (None, None) => String::new(),
    }
}

impl Error {
    pub fn config(key: &str, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.to_string(),
            reason: reason.into(),
        }
    }

    pub fn format_at(offset: usize, reason: impl Into<String>) -> Self {
        Error::Format {
            path: String::new(),
            offset,
            reason: reason.into(),
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Attach a file path to a format error produced by a byte-level parser.
    pub fn with_path(mut self, p: &Path) -> Self {
        if let Error::Format { path, .. } = &mut self {
            *path = p.display().to_string();
        }
        self
    }

    /// Attach round/client context to a divergence raised inside local training.
    pub fn at_round(mut self, r: usize, c: usize) -> Self {
        if let Error::Divergence { round, client, .. } = &mut self {
            *round = Some(r);
            *client = Some(c);
        }
        self
    }

    /// Process exit code for the CLI: 2 for config/usage problems, 3 for
    /// numerical divergence.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Divergence { .. } | Error::NonFinite { .. } => 3,
            _ => 2,
        }
    }
}
