use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("zero vector at index {index}")]
    ZeroVector { index: usize },
    #[error("transform is singular or too ill-conditioned (ratio {ratio:e})")]
    SingularTransform { ratio: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("matrix is not symmetric (asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("matrix is not positive semidefinite (Rayleigh quotient {value:e})")]
    NotPsd { value: f64 },
    #[error("eigendecomposition failed to verify after {attempts} attempts (worst ratio {worst_ratio:e})")]
    EigenFailed { attempts: usize, worst_ratio: f64 },
    #[error("power iteration hit its cap of {t} steps without verifying (worst ratio {worst_ratio:e})")]
    EigenNotConverged { t: u64, worst_ratio: f64 },
    #[error("all eigenvalue gaps are within tolerance")]
    AllEqual,
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("no step size decreased the potential from {potential:e} (case {case}, {probes} probes)")]
    NoDecrease {
        potential: f64,
        case: String,
        probes: usize,
    },
    #[error("iteration cap {cap} exceeded")]
    IterationCapExceeded { cap: usize, potential_trace: Vec<f64> },
    #[error("points span only {rank} of {d} dimensions")]
    DoesNotSpan { rank: usize, d: usize },
    #[error("singular gap too small for a reduction step (g = {g:e})")]
    GapTooSmall { g: f64 },
    #[error("rounding needs integer entries beyond 2^53 (largest {magnitude:e})")]
    EntryOverflow { magnitude: f64 },
    #[error("condition reduction did not finish within {rounds} rounds")]
    MaxRoundsExceeded { rounds: usize },
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("perceptron budget exhausted on all {starts} starts")]
    NotSeparable { starts: usize },
    #[error("no stopping round within the budget of {rounds} rounds")]
    RoundBudgetExceeded { rounds: usize },
    #[error("bad generator spec: {0}")]
    BadSpec(String),
    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// Short machine-readable name, used in JSON diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ZeroVector { .. } => "zero_vector",
            Error::SingularTransform { .. } => "singular_transform",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidInput(_) => "invalid_input",
            Error::NotSymmetric { .. } => "not_symmetric",
            Error::NotPsd { .. } => "not_psd",
            Error::EigenFailed { .. } => "eigen_failed",
            Error::EigenNotConverged { .. } => "eigen_not_converged",
            Error::AllEqual => "all_equal",
            Error::PreconditionViolated(_) => "precondition_violated",
            Error::NoDecrease { .. } => "no_decrease",
            Error::IterationCapExceeded { .. } => "iteration_cap_exceeded",
            Error::DoesNotSpan { .. } => "does_not_span",
            Error::GapTooSmall { .. } => "gap_too_small",
            Error::EntryOverflow { .. } => "entry_overflow",
            Error::MaxRoundsExceeded { .. } => "max_rounds_exceeded",
            Error::DegenerateInput(_) => "degenerate_input",
            Error::NotSeparable { .. } => "not_separable",
            Error::RoundBudgetExceeded { .. } => "round_budget_exceeded",
            Error::BadSpec(_) => "bad_spec",
            Error::Parse(_) => "parse",
        }
    }
}
