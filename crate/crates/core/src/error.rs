use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix contains non-finite entries")]
    NonFinite,

    #[error("matrix is not Hermitian (max asymmetry {asymmetry:.3e})")]
    NotHermitian { asymmetry: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("state is not faithful at working precision (min log-population {min_log_population:.3e})")]
    NotFaithful { min_log_population: f64 },

    #[error("Fock truncation insufficient: dim {dim} leaves tail population {tail:.3e}; suggest dim >= {suggested}")]
    Truncation { dim: usize, tail: f64, suggested: usize },

    #[error("Hamiltonian spectrum is degenerate (min gap {min_gap:.3e})")]
    DegenerateSpectrum { min_gap: f64 },

    #[error("transition graph is disconnected; steady state is not unique")]
    DisconnectedTransitions,

    #[error("generator kernel is degenerate")]
    DegenerateKernel,

    #[error("operator is not centered: stationary mean {mean:.3e}")]
    Uncentered { mean: f64 },

    #[error("ill-conditioned solve: {0}")]
    Conditioning(String),

    #[error("quadrature did not converge: {0}")]
    NonConvergence(String),

    #[error("invalid protocol: {0}")]
    Protocol(String),

    #[error("quantity undefined: {0}")]
    Undefined(String),

    #[error("linear algebra backend failure: {0}")]
    Linalg(String),
}

impl From<ndarray_linalg::error::LinalgError> for Error {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        Error::Linalg(e.to_string())
    }
}
