use std::fmt;
use std::path::PathBuf;

use crate::graph::VertexId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// A violated patrol-graph invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum GraphViolation {
    TooFewVertices(usize),
    NonDenseIds,
    UnknownVertex(VertexId),
    SelfLoop(VertexId),
    DuplicateEdge { from: VertexId, to: VertexId },
    NonPositiveWeight { from: VertexId, to: VertexId, weight: f64 },
    Disconnected,
}

impl fmt::Display for GraphViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphViolation::TooFewVertices(n) => write!(f, "too few vertices ({n}, need at least 2)"),
            GraphViolation::NonDenseIds => write!(f, "vertex ids must be exactly 0..|V|-1"),
            GraphViolation::UnknownVertex(v) => write!(f, "edge references unknown vertex {v}"),
            GraphViolation::SelfLoop(v) => write!(f, "self-loop at vertex {v}"),
            GraphViolation::DuplicateEdge { from, to } => write!(f, "duplicate edge {from}->{to}"),
            GraphViolation::NonPositiveWeight { from, to, weight } => {
                write!(f, "nonpositive weight {weight} on edge {from}->{to}")
            }
            GraphViolation::Disconnected => write!(f, "disconnected"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid graph: {0}")]
    InvalidGraph(GraphViolation),
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("time {t} is outside the profile horizon [0, {horizon}]")]
    OutOfHorizon { t: f64, horizon: f64 },
    #[error("traversal of edge {edge} starting at t={start} does not complete within the profile horizon")]
    NeverCompletes { edge: usize, start: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("traffic ingestion: {0}")]
    Ingest(String),
    #[error("nonpositive observed weight {0}")]
    NonPositiveObservation(f64),
    #[error("omniscient beliefs need the ground-truth profile and graph")]
    MissingTruth,
    #[error("belief read at t={t_now} precedes anchor time {anchor_time}")]
    BeforeAnchor { t_now: f64, anchor_time: f64 },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("unmatched entries: {}", .0.join("; "))]
    Unmatched(Vec<String>),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

impl From<GraphViolation> for Error {
    fn from(v: GraphViolation) -> Self {
        Error::InvalidGraph(v)
    }
}
