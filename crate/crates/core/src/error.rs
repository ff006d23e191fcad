use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape {dims:?} holds {expected} elements but {actual} were supplied")]
    DataLength {
        dims: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("invalid shape {0:?}: need at least one mode and every size >= 1")]
    InvalidShape(Vec<usize>),
    #[error("mode {mode} out of range for an order-{order} tensor")]
    ModeOutOfRange { mode: usize, order: usize },
    #[error("invalid mode permutation {0:?}")]
    InvalidPermutation(Vec<usize>),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("mode {0} listed more than once")]
    RepeatedMode(usize),
    #[error("invalid convolution geometry: {0}")]
    Geometry(String),
    #[error("non-finite entry in input matrix")]
    NonFinite,
    #[error("rank chaining violated: {0}")]
    RankChain(String),
    #[error("R1 = {r1} does not divide the truncated first-unfolding rank {rank}")]
    RankNotDivisible { r1: usize, rank: usize },
    #[error("expected an order-{expected} tensor, got order {actual}")]
    Order { expected: usize, actual: usize },
    #[error("R1 = {r1} outside the admissible range for shift {shift}: {reason}")]
    RankOutOfRange {
        shift: usize,
        r1: usize,
        reason: String,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("archive format: {0}")]
    Format(String),
    #[error("archive has no tensor named `{0}`")]
    MissingTensor(String),
    #[error("unknown network `{0}`")]
    UnknownNetwork(String),
    #[error("network spec: {0}")]
    Network(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
