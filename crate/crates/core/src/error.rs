use thiserror::Error;

/// Errors raised by the consensus laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid weight matrix: {0}")]
    InvalidWeights(String),

    #[error("symmetric weights requested on an asymmetric graph")]
    AsymmetricGraph,

    #[error("row {row} has norm {norm:e}, cannot project onto the sphere")]
    DegenerateRow { row: usize, norm: f64 },

    /// The conical combination for `agent` vanished, so the projection is undefined.
    #[error("zero row image for agent {agent} (norm {norm:e})")]
    ZeroRowImage { agent: usize, norm: f64 },

    #[error("vector is not unit length (norm {0})")]
    NotUnit(f64),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("eigenvalue solver did not converge")]
    Eigen,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
