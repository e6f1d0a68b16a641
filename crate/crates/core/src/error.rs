//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

use crate::routing::NodeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown node id {0}")]
    UnknownNode(NodeId),

    #[error("unknown agent id {0}")]
    UnknownAgent(usize),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("illegal action by agent {agent}: {reason}")]
    IllegalAction { agent: usize, reason: String },

    #[error("pool node {node} claimed by agents {first} and {second}")]
    PoolConflict {
        node: NodeId,
        first: usize,
        second: usize,
    },

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("instance too large for {solver}: {detail}")]
    Size {
        solver: &'static str,
        detail: String,
    },

    #[error("non-finite loss at step {step} on problem {problem}")]
    Numerical { step: usize, problem: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed record at line {line}: {reason}")]
    Format {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("format version mismatch: expected {expected}, found {found}")]
    Version { expected: String, found: String },

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn illegal(agent: usize, reason: impl Into<String>) -> Self {
        Error::IllegalAction {
            agent,
            reason: reason.into(),
        }
    }
}
