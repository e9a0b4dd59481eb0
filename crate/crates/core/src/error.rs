use alloc::string::String;

use crate::party::PartyId;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("value {value} is outside the fixed-point range (|x| < {bound})")]
    Overflow { value: f64, bound: f64 },

    #[error("secret sharing needs at least 2 parties, got {0}")]
    TooFewParties(usize),

    #[error("shape mismatch in {context}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("no share supplied for party {0}")]
    MissingShare(PartyId),

    #[error("share owned by {found} where {expected} was expected")]
    OwnerMismatch { expected: PartyId, found: PartyId },

    #[error("beaver triple was already consumed")]
    TripleReused,

    #[error("triple pool exhausted")]
    TripleExhausted,

    #[error("invalid proportions: {0}")]
    InvalidProportions(String),

    #[error("invalid probability: {0}")]
    InvalidProbability(String),

    #[error("invalid privacy parameters: {0}")]
    InvalidDpParams(String),

    #[error("dimension {0} is too small for the James-Stein estimator (need d >= 3)")]
    DimensionTooSmall(usize),

    #[error("mask selects no nodes")]
    EmptyMask,

    #[error("cache was produced by an older parameter generation")]
    StaleCache,

    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("protocol error: {0}")]
    Protocol(String),
}

impl Error {
    pub(crate) fn shape(context: &'static str, expected: (usize, usize), found: (usize, usize)) -> Self {
        Error::ShapeMismatch { context, expected, found }
    }
}
