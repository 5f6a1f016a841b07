//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// A single invariant violation, with the field path that triggered it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    /// One or more scenario/type invariants failed.
    #[error("invalid input: {}", format_violations(.0))]
    Invalid(Vec<Violation>),

    /// Caller passed arguments in the wrong order or out of range.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Adaptive quadrature could not reach the requested tolerance.
    /// Carries the best estimate and its error bound.
    #[error("quadrature did not converge: estimate {estimate:.17e}, error bound {error_bound:.3e}")]
    QuadratureConvergence { estimate: f64, error_bound: f64 },

    /// Extended-range value does not fit in `f64`, or division by zero.
    #[error("numeric overflow: {0}")]
    Overflow(String),

    /// Conditioning value outside the built table range.
    #[error("conditioning value {m} outside table range 0..={m_max}")]
    TableRange { m: u64, m_max: u64 },

    /// Conditioning on an event of probability zero.
    #[error("conditioning on a null event: P(M(t) = {m}) = 0 under this scenario")]
    NullConditioning { m: u64 },

    /// Reported-count predictor is undefined because no claim is ever
    /// reported by time t; use unconditional prediction instead.
    #[error("expected reported count is zero (all claims unreported by t); delay predictor undefined — use unconditional prediction")]
    NoReportedClaims,

    /// Monte Carlo bin does not contain enough replicates.
    #[error("insufficient data: {got} replicates satisfy the condition, need at least {need}")]
    InsufficientData { got: usize, need: usize },

    /// Ratio-estimator weights degenerate in the tail.
    #[error("oracle unreliable in the tail: effective sample size {ess:.1} < {min}")]
    TailUnreliable { ess: f64, min: f64 },
}

fn format_violations(vs: &[Violation]) -> String {
    vs.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}
