use thiserror::Error;

/// Errors raised by the numerical modules.
///
/// Violations that the operations treat as ordinary data (a failed Diophantine
/// check, a reversibility defect list) are returned as values, not errors.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("imaginary residue {residue:e} exceeds tolerance {tolerance:e}")]
    ImaginaryResidue { residue: f64, tolerance: f64 },

    #[error("series has nonzero average (max component {0:e}); the cohomological equation is unsolvable")]
    NonzeroAverage(f64),

    #[error("small divisor {divisor:e} at k = {k:?} is below the Diophantine bound {bound:e}")]
    SmallDivisor { k: Vec<i64>, divisor: f64, bound: f64 },

    #[error("mode matrix at k = {k:?} is numerically singular (condition {condition:e})")]
    SingularMode { k: Vec<i64>, condition: f64 },

    #[error("zero-mode right-hand side is not in the range of the restricted map (residual {0:e})")]
    ZeroModeObstruction(f64),

    #[error("matrix is not an involution: |R^2 - I| = {0:e}")]
    NotInvolutive(f64),

    #[error("restricted map Fix R -> Fix(-R) cannot reach the right-hand side (residual {0:e})")]
    Obstruction(f64),

    #[error("vector is not in Fix(-R): |R v + v| = {0:e}")]
    NotAntiInvariant(f64),

    #[error("matrix does not anti-commute with its involution: |RQ + QR| = {0:e}")]
    NotReversible(f64),

    #[error("eigenvalue {re:e}{im:+e}i has no partner -a within tolerance")]
    UnpairedSpectrum { re: f64, im: f64 },

    #[error("root finding failed: {0}")]
    RootFindFailure(String),

    #[error("integration step failure at t = {t}: {reason}")]
    StepFailure { t: f64, reason: String },

    #[error("k = 0 matrix obstruction is not spanned by the orbit tangent and unfolding directions (residual {0:e})")]
    VersalObstruction(f64),

    #[error("Newton iteration did not converge; residual history {history:?}")]
    NoConvergence { history: Vec<f64> },

    #[error("cancellation identity {identity} fails: {value:e} > {tolerance:e}")]
    CancellationFailure { identity: String, value: f64, tolerance: f64 },

    #[error("truncation loss {loss:e} exceeds bound {bound:e}")]
    TruncationOverflow { loss: f64, bound: f64 },

    #[error("implicit solve for {equation} did not contract: {reason}")]
    ImplicitSolveFailure { equation: String, reason: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("serialization: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, Error>;
