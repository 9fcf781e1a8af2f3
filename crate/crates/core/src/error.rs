use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate geometry: all distances map to the same log2 abscissa")]
    DegenerateGeometry,

    #[error("decay per doubling {d2s} dB(A) is too close to zero to evaluate the comfort distance")]
    ZeroDecay { d2s: f64 },

    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),

    #[error("invalid path: {0}")]
    InvalidPath(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("field domain error: {0}")]
    FieldDomain(String),

    #[error("insufficient samples: {got} (need at least {need})")]
    InsufficientSamples { got: usize, need: usize },

    #[error("insufficient paths: {got} (need at least 2)")]
    InsufficientPaths { got: usize },

    #[error("infeasible office spec: {0}")]
    InfeasibleSpec(String),
}
