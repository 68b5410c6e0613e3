use thiserror::Error;

/// Errors produced by graph construction, scoring, the structured losses,
/// decoding, evaluation and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("candidate entity `{0}` does not resolve to any entity in the document")]
    InvalidCandidate(String),

    #[error("duplicate entity id `{0}`")]
    DuplicateEntity(String),

    #[error("duplicate span ({0}, {1})")]
    DuplicateSpan(usize, usize),

    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    FeatureDim { expected: usize, got: usize },

    #[error("gradient shape mismatch: {0}")]
    GradShape(String),

    #[error("gold mention ({0}, {1}) is not among the retained spans")]
    GoldSpanPruned(usize, usize),

    #[error("graph has no spanning arborescence rooted at the root node")]
    GraphDisconnected,

    #[error("cluster {index} has no valid tree under the masked weights")]
    ClusterUnreachable { index: usize },

    #[error("oracle limit exceeded: {nodes} non-root nodes > cap {cap}")]
    OracleTooLarge { nodes: usize, cap: usize },

    #[error("malformed tree: {0}")]
    MalformedTree(String),

    #[error("invalid clustering: {0}")]
    InvalidClustering(String),

    #[error("parse error at {path}: {msg}")]
    Parse { path: String, msg: String },

    #[error("document `{doc}`: gold entity `{entity}` missing from every member candidate list")]
    UncoverableCluster { doc: String, entity: String },

    #[error("oracle check failed: {0}")]
    OracleCheckFailed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code: 2 for parse/validation problems, 3 for
    /// numerical/structural failures, 4 for oracle-check failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidCandidate(_)
            | Error::DuplicateEntity(_)
            | Error::DuplicateSpan(..)
            | Error::FeatureDim { .. }
            | Error::InvalidClustering(_)
            | Error::Parse { .. } => 2,
            Error::GradShape(_)
            | Error::GoldSpanPruned(..)
            | Error::GraphDisconnected
            | Error::ClusterUnreachable { .. }
            | Error::OracleTooLarge { .. }
            | Error::MalformedTree(_)
            | Error::UncoverableCluster { .. } => 3,
            Error::OracleCheckFailed(_) => 4,
            Error::Io(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
