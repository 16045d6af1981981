use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("record {record_id} references unknown tracklet `{tracklet_id}`")]
    MissingTracklet { record_id: u64, tracklet_id: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite value in {context}")]
    NonFiniteValue { context: String },

    #[error("duplicate key: {0}")]
    DuplicateKey(String),

    #[error("invalid manifest: {0}")]
    InvalidManifest(String),

    #[error("gallery is empty")]
    EmptyGallery,

    #[error("no gallery record outside the probe encounter")]
    NoEligibleNeighbors,

    #[error("no probes to evaluate")]
    NoProbes,

    #[error("tracklet has no frames")]
    EmptyTracklet,

    #[error("vectors cancel to zero; cannot normalise")]
    ZeroVector,

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("friend set is empty")]
    EmptyFriendSet,

    #[error("foe set is empty")]
    EmptyFoeSet,

    #[error("relevance map is {map_rows}x{map_cols} but patch grid is {grid_rows}x{grid_cols}")]
    OrderMismatch {
        map_rows: usize,
        map_cols: usize,
        grid_rows: usize,
        grid_cols: usize,
    },

    #[error("total relevance is zero")]
    ZeroRelevance,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("cannot-link constraints forbid reaching {target} clusters (stuck at {reached})")]
    InfeasibleK { target: usize, reached: usize },

    #[error("label vectors cover different items ({0} vs {1})")]
    DomainMismatch(usize, usize),

    #[error("invalid scenario spec: {0}")]
    InvalidSpec(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
