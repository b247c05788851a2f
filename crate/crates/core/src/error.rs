use alloc::string::String;
use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid trajectory {id}: {reason}")]
    InvalidTrajectory { id: u64, reason: String },

    #[error("trajectory of length {len} cannot hold 4 segments of {blocks} blocks")]
    SegmentUnderflow { len: usize, blocks: usize },

    #[error("block count must be at least 1")]
    ZeroBlocks,

    #[error("split fraction {0} is outside (0, 1)")]
    InvalidFraction(f64),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("trajectory lengths differ ({expected} vs {found}); mixed lengths are not supported")]
    MixedLengths { expected: usize, found: usize },

    #[error("eigensolver did not converge ({context})")]
    EigenNoConvergence { context: String },

    #[error("value iteration did not converge within {0} iterations")]
    ValueIterationCap(usize),

    #[error("adversarial strength {0} is outside [0, 1]")]
    InvalidStrength(f64),

    #[error("separation target {target} not reached after {attempts} attempts")]
    SeparationUnreachable { target: f64, attempts: usize },

    #[error("chain for label {label} did not mix within {cap} steps (last TV {last_tv})")]
    NotMixing { label: usize, cap: usize, last_tv: f64 },

    #[error("no state-action pair has frequency above beta = {beta} (max observed {max_frequency})")]
    EmptyFrequentSet { beta: f64, max_frequency: f64 },

    #[error("distance density has a single mode; set the threshold manually")]
    UnimodalDistances,

    #[error("need at least two distinct distance values to pick a threshold")]
    TooFewDistances,

    #[error("K = {k} exceeds the number of items ({n})")]
    TooManyClusters { k: usize, n: usize },

    #[error("K = {0} is above the supported maximum of 12 for permutation matching")]
    PermutationTooLarge(usize),

    #[error("label {label} out of range for K = {k}")]
    LabelOutOfRange { label: usize, k: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}
