use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("cycle detected at `{0}`")]
    Cycle(String),

    #[error("orphan node `{0}`: no parent at the preceding depth")]
    Orphan(String),

    #[error("internal node `{0}` carries match hints; only leaves may")]
    HintsOnInternal(String),

    #[error("invalid id `{0}`: ids must match [a-z0-9_]+")]
    InvalidId(String),

    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("folder `{0}` does not match any taxonomy node")]
    UnknownFolder(String),

    #[error("node `{0}` is not expandable (needs at least two children)")]
    NotExpandable(String),

    #[error("leaf `{leaf}` has {count} documents, at least {needed} required")]
    TooFewDocuments {
        leaf: String,
        count: usize,
        needed: usize,
    },

    #[error("child `{child}` of node `{node}` owns no documents")]
    EmptySubtree { node: String, child: String },

    #[error("class `{class}` has {count} samples, at least {needed} required")]
    TooFewSamples {
        class: String,
        count: usize,
        needed: usize,
    },

    #[error("vocabulary is empty after tokenization and filtering")]
    EmptyVocabulary,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("input contains non-finite values")]
    NonFinite,

    #[error("feature mode mismatch: {0}")]
    ModeMismatch(String),

    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("training needs at least two classes, found {0}")]
    SingleClass(usize),

    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("edge `{u}` -> `{v}` references a missing node")]
    DanglingEdge { u: String, v: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid model bundle: {0}")]
    Bundle(String),

    #[error("node `{node}`: {source}")]
    Node {
        node: String,
        #[source]
        source: Box<Error>,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }

    pub(crate) fn in_node(self, node: &str) -> Self {
        match self {
            e @ Error::Node { .. } => e,
            e => Error::Node {
                node: node.to_string(),
                source: Box::new(e),
            },
        }
    }
}
