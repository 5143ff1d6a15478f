use thiserror::Error;

use crate::domain::NormMode;

pub type Result<T, E = GameError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GameError {
    #[error("entry {index} is negative ({value})")]
    NegativeEntry { index: usize, value: f64 },

    #[error("entry {index} is not finite ({value})")]
    NonFiniteEntry { index: usize, value: f64 },

    #[error("{mode:?} normalization violated: observed {observed}")]
    NormalizationViolated { mode: NormMode, observed: f64 },

    #[error("policy entry {index} is not strictly positive ({value})")]
    NonPositiveProbability { index: usize, value: f64 },

    #[error("policy does not sum to one (sum = {sum})")]
    NotADistribution { sum: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("index {index} out of range for {len} groups")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("argument must be positive, got {0}")]
    NonPositiveArgument(f64),

    #[error("{0} is outside the range of f'")]
    OutOfRange(f64),

    #[error("invalid divergence: {0}")]
    InvalidDivergence(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("solver {solver} does not support the {kind} divergence")]
    UnsupportedDivergence {
        solver: &'static str,
        kind: &'static str,
    },

    #[error("chi-squared optimum keeps only {support} outcome(s) above the positivity floor")]
    DegenerateSolution { support: usize },

    #[error("no multiplier bracket found after {expansions} expansions")]
    BracketFailure { expansions: usize },

    #[error("grid oracle limited to {max} outcomes / {max_points} points, got {found} outcomes")]
    DimensionTooLarge {
        found: usize,
        max: usize,
        max_points: u64,
    },

    #[error("candidate set is empty")]
    EmptyCandidateSet,

    #[error("epsilon {epsilon} too large (must be below {limit})")]
    EpsilonTooLarge { epsilon: f64, limit: f64 },

    #[error("reward model is constant; no shift exists")]
    DegeneratePreference,

    #[error("blended reward is zero everywhere after clamping")]
    AllZeroAfterClamp,

    #[error("invalid strategy parameter: {0}")]
    InvalidStrategy(String),
}
