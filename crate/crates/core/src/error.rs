use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("tensor product of an empty operator list")]
    EmptyTensor,

    #[error("operator is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("site {site} out of range for a register of {size} qubits")]
    SiteOutOfRange { site: usize, size: usize },

    #[error("matrix is not Hermitian (max deviation {0:e})")]
    NotHermitian(f64),

    #[error("not a density operator: {0}")]
    InvalidState(String),

    #[error("invalid POVM: {0}")]
    InvalidPovm(String),

    #[error("invalid observable: {0}")]
    InvalidObservable(String),

    #[error("invalid layout: {0}")]
    InvalidLayout(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("resource limit: {requested} qubits requested, limit is {limit}")]
    ResourceLimit { requested: usize, limit: usize },

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
