use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid Pauli letter {0:?} (expected one of I, X, Y, Z)")]
    InvalidPauliLetter(char),
    #[error("empty Pauli word")]
    EmptyPauliWord,
    #[error("dimension {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("matrix of length {0} is not square")]
    NotSquare(usize),
    #[error("operator is not Hermitian: imaginary residue {residual:e} in the Pauli coefficients")]
    NonHermitian { residual: f64 },
    #[error("site {site} out of range for {n_sites} sites")]
    SiteOutOfRange { site: usize, n_sites: usize },
    #[error("{n_sites} sites exceeds the memory guard of {limit}; raise the limit explicitly")]
    TooManySites { n_sites: usize, limit: usize },
    #[error("gate of dimension {dim} does not match a support of {support} sites")]
    GateDimensionMismatch { dim: usize, support: usize },
    #[error("gate matrix is not unitary (deviation {0:e})")]
    NotUnitary(f64),
    #[error("duplicate site {0} in support")]
    DuplicateSite(usize),
    #[error("noise rate {0} outside [0, 1]")]
    InvalidRate(f64),
    #[error("zero operator has no Pauli distribution")]
    ZeroOperator,
    #[error("layer {layer} out of range for a circuit with {layers} layers")]
    LayerOutOfRange { layer: usize, layers: usize },
    #[error("invalid circuit: {0}")]
    InvalidCircuit(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("permutation degree mismatch: {0} vs {1}")]
    DegreeMismatch(usize, usize),
    #[error("group degree {0} out of the supported range")]
    DegreeOutOfRange(usize),
    #[error("fit needs at least {needed} significant points, found {found}")]
    InsufficientPoints { needed: usize, found: usize },
    #[error("no sign change of the decay rate in the scanned range")]
    NoSignChange,
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
