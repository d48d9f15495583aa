use thiserror::Error;

/// Errors surfaced by the toolkit.
///
/// Numeric payloads are reported as `f64` regardless of the working scalar.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("near field unresolvable: delta {delta} is below the grid spacing {h}")]
    NearFieldUnresolvable { delta: f64, h: f64 },

    #[error("lattice tail did not converge within {shells} shells (increment tolerance {tol})")]
    LatticeTail { shells: usize, tol: f64 },

    #[error("iteration cap {cap} exceeded; last residual {residual}")]
    IterationCap { cap: usize, residual: f64 },

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("non-monotone discount extrapolation (residuals {prev} -> {next}); discretization error may dominate the ladder")]
    ExtrapolationNonMonotone { prev: f64, next: f64 },

    #[error("linear program infeasible")]
    LpInfeasible,

    #[error("linear program unbounded")]
    LpUnbounded,

    #[error("internal error: {0}")]
    Internal(String),

    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
