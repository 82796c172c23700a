use std::path::PathBuf;

use thiserror::Error;

use crate::corpus::Label;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the pipeline can surface.
///
/// The variants are grouped by how a caller is expected to react: input
/// problems (`Parse`, `Validation`, `Config`), programming/contract problems
/// (`Contract`, `Domain`, `Lookup`, `Capacity`, `Provenance`), and remote
/// problems (`Transport`, `Protocol`, `Decode`, `Offline`).
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("no embedding for sentence id {0:?}")]
    Lookup(String),

    #[error("not enough {class} exemplars in pool: need {needed}, have {available}")]
    Capacity {
        class: Label,
        needed: usize,
        available: usize,
    },

    #[error("provenance mismatch: {0}")]
    Provenance(String),

    #[error("unparseable reply: {raw:?}")]
    UnparseableReply { raw: String },

    #[error("transport failed after {attempts} attempt(s): {message}")]
    Transport {
        attempts: u32,
        status: Option<u16>,
        message: String,
    },

    #[error("embedding request failed for {} sentence(s) ({message})", ids.len())]
    EmbeddingTransport { ids: Vec<String>, message: String },

    #[error("provider returned HTTP {status}: {body}")]
    Protocol { status: u16, body: String },

    #[error("could not decode provider response: {0}")]
    Decode(String),

    #[error("offline mode: request {digest} is not cached")]
    Offline { digest: String },

    #[error("debate for {sentence_id} aborted after {} opinion(s): {source}", completed.len())]
    DebateAborted {
        sentence_id: String,
        completed: Vec<(crate::prompting::DebateRole, String)>,
        #[source]
        source: Box<Error>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error originated on the remote side of a provider call.
    pub fn is_remote(&self) -> bool {
        match self {
            Error::Transport { .. }
            | Error::EmbeddingTransport { .. }
            | Error::Protocol { .. }
            | Error::Decode(_)
            | Error::Offline { .. } => true,
            Error::DebateAborted { source, .. } => source.is_remote(),
            _ => false,
        }
    }
}
