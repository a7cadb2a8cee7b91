//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A malformed row or record in an input file.
    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    /// Cross-file consistency violation (e.g. an interaction referencing
    /// an item that has no metadata record).
    #[error("integrity error: {0}")]
    Integrity(String),

    /// Invalid configuration or unsatisfiable request.
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller violated an operation precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Item id not present in the catalog.
    #[error("unknown item id: {0}")]
    UnknownItem(String),

    /// Vector/matrix dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Numerically invalid value where a finite one is required.
    #[error("domain error: {0}")]
    Domain(String),

    /// Text produced no tokens or a degenerate embedding.
    #[error("encoding error: {0}")]
    Encoding(String),

    /// Loss became non-finite during local training.
    #[error("training diverged at epoch {epoch}, batch {batch}: {message}")]
    TrainingDiverged {
        epoch: usize,
        batch: usize,
        message: String,
    },

    /// A client failed during a federated round.
    #[error("client {client} failed in round {round}: {source}")]
    ClientTraining {
        client: usize,
        round: usize,
        #[source]
        source: Box<Error>,
    },

    /// Transport-level failure talking to a chat-completion backend.
    #[error("transport error: {0}")]
    Transport(String),

    /// Non-2xx response from a chat-completion backend.
    #[error("protocol error (status {status}): {message}")]
    Protocol { status: u16, message: String },

    /// The shared request budget hit zero.
    #[error("request budget exhausted")]
    BudgetExhausted,

    /// Checkpoint file is missing, truncated, or fails its content hash.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad inputs/configuration rather than
    /// runtime failures. The CLI maps these to exit code 2.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Integrity(_)
                | Error::Config(_)
                | Error::InvalidInput(_)
                | Error::UnknownItem(_)
                | Error::Shape(_)
                | Error::Domain(_)
        )
    }
}
