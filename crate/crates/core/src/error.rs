use thiserror::Error;

/// Errors surfaced by the induction and construction pipeline.
///
/// The CLI maps these onto process exit codes: malformed input is a usage
/// error (2), connections and degenerate ties are dynamical degeneracies (3),
/// convergence and truncation failures are 4, and broken internal invariants
/// are 5.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("malformed data: {0}")]
    Malformed(String),

    #[error("combinatorial data is reducible: {0}")]
    Reducible(String),

    #[error("arrows do not compose at step {at}")]
    PathCompose { at: usize },

    #[error("connection detected at step {step}: |lambda_top - lambda_bottom| = {gap}")]
    Connection { step: usize, gap: String },

    #[error("point {0} is a singularity")]
    SingularPoint(String),

    #[error("point {0} lies outside the domain")]
    OutsideDomain(String),

    #[error("rejection sampling exhausted after {tries} tries (acceptance rate {rate:.3e})")]
    Sampling { tries: u64, rate: f64 },

    #[error("requested depth {requested} exceeds available past {available}")]
    DepthExceeded { requested: usize, available: usize },

    #[error("itinerary length {len} exceeds cap {cap}; lower the depth")]
    ItineraryTooLong { len: usize, cap: usize },

    #[error("frame has not converged: {0}")]
    Convergence(String),

    #[error("degenerate tie while locating a maximum: {0}")]
    DegenerateTie(String),

    #[error("truncation too small: estimated tail mass {tail:.3e} exceeds budget {budget:.3e}")]
    TruncationTooSmall { tail: f64, budget: f64 },

    #[error("x* interval must be refined: {0}")]
    RefineRequired(String),

    #[error("internal invariant breached: {0}")]
    Internal(String),
}

impl Error {
    /// Process exit code the CLI reports for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Malformed(_) | Error::Reducible(_) | Error::PathCompose { .. } => 2,
            Error::Connection { .. }
            | Error::SingularPoint(_)
            | Error::OutsideDomain(_)
            | Error::DegenerateTie(_) => 3,
            Error::Sampling { .. }
            | Error::DepthExceeded { .. }
            | Error::ItineraryTooLong { .. }
            | Error::Convergence(_)
            | Error::TruncationTooSmall { .. }
            | Error::RefineRequired(_) => 4,
            Error::Internal(_) => 5,
        }
    }
}
