use thiserror::Error;

/// Errors produced anywhere in the library.
///
/// The CLI maps the variants onto process exit codes: configuration and
/// schema problems exit with 2, numerical failures with 3, capacity
/// violations with 4.
#[derive(Debug, Error)]
pub enum Error {
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    Divergence { epoch: usize, reason: String },

    #[error("query generation failed for rule `{rule}`: {reason}")]
    Generation { rule: String, reason: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("template parse error: {0}")]
    Template(#[from] toml::de::Error),
}

impl Error {
    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Schema(_)
            | Error::Template(_)
            | Error::Json(_)
            | Error::Generation { .. } => 2,
            Error::Numerical(_) | Error::Divergence { .. } | Error::Domain(_) => 3,
            Error::Capacity(_) => 4,
            Error::Io(_) | Error::Csv(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
