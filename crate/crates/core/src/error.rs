use thiserror::Error;

/// Crate-wide error type; variants name the violated contract.
#[derive(Error, Debug)]
pub enum Error {
    #[error("dimension {0} unsupported, expected 2 or 3")]
    DimensionUnsupported(usize),
    #[error("grid size {n} invalid: {reason}")]
    GridSize { n: usize, reason: &'static str },
    #[error("fields live on different lattices")]
    LatticeMismatch,
    #[error("spectral field is not conjugate-symmetric; cannot produce a real grid field")]
    NonHermitian,
    #[error("mollification scale {0} must be positive and finite")]
    InvalidEpsilon(f64),
    #[error("operation requires dimension {expected}, lattice has {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("renormalization constants were computed at eps = {consts_eps}, field has eps = {field_eps}")]
    ConstantsMismatch { field_eps: f64, consts_eps: f64 },
    #[error("missing component: {0}")]
    MissingComponent(&'static str),
    #[error("block index {n} out of range, highest block is {max}")]
    BlockOutOfRange { n: usize, max: usize },
    #[error("only {usable} usable blocks in the fit range, need at least 3")]
    TooFewBlocks { usable: usize },
    #[error("integrability exponent {0} must be >= 1 (or infinite)")]
    InvalidExponent(f64),
    #[error("exact double sum only feasible for N <= {max}, lattice has N = {n}")]
    ExactSumTooLarge { n: usize, max: usize },
    #[error("operator failed the symmetry pre-check: |<Av,w> - <v,Aw>| = {discrepancy:.3e} (scale {scale:.3e})")]
    NotSymmetric { discrepancy: f64, scale: f64 },
    #[error("eigensolver did not reach tolerance {tol:.1e} in {iterations} iterations; residuals {residuals:?}")]
    NotConverged {
        tol: f64,
        iterations: usize,
        residuals: Vec<f64>,
    },
    #[error("inner linear solve stalled at relative residual {residual:.3e}")]
    LinearSolveFailed { residual: f64 },
    #[error("need at least {need} points for the fit, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("no records found in {0}")]
    NoData(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
