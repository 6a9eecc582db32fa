use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("example {id}: answer {answer:?} does not name any entity in the graph")]
    UnknownAnswer { id: String, answer: String },

    #[error("example {id}: graph has no edges")]
    NoEdges { id: String },

    #[error("example {id}: question has no tokens")]
    EmptyQuestion { id: String },

    #[error("cannot build a vocabulary from an empty example list")]
    EmptyCorpus,

    #[error("cannot encode an empty token sequence")]
    EmptyText,

    #[error("edge ({from}, {to}) references a node outside 0..{nodes}")]
    DanglingEdge { from: usize, to: usize, nodes: usize },

    #[error("node {0:?} has no entry in the KG embedding table")]
    MissingKgEntry(String),

    #[error("non-finite node state after hop {hop}")]
    NonFiniteState { hop: usize },

    #[error("example {example} has no copyable nodes")]
    NoCopyableNodes { example: String },

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: u64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("prediction ids do not match the gold corpus: {}", describe_ids(.missing, .unexpected))]
    IdMismatch {
        /// Gold ids without a prediction.
        missing: Vec<String>,
        /// Predicted ids absent from the gold corpus.
        unexpected: Vec<String>,
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
}

fn describe_ids(missing: &[String], unexpected: &[String]) -> String {
    let mut parts = Vec::new();
    if !missing.is_empty() {
        parts.push(format!("missing [{}]", missing.join(", ")));
    }
    if !unexpected.is_empty() {
        parts.push(format!("unexpected [{}]", unexpected.join(", ")));
    }
    parts.join("; ")
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
