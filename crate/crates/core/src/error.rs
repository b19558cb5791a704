use thiserror::Error;

/// Errors raised anywhere in the engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("pmf is empty")]
    EmptyDistribution,
    #[error("pmf sums to {sum} (expected 1 within 1e-12)")]
    NotNormalized { sum: f64 },
    #[error("pmf entry {value} at slot {slot} is below the floor {floor}")]
    BelowFloor { slot: usize, value: f64, floor: f64 },
    #[error("pmf entry at slot {slot} is not a finite probability: {value}")]
    InvalidProbability { slot: usize, value: f64 },
    #[error("floor {floor} must lie in [0, 1/T] for T = {horizon}")]
    InvalidFloor { floor: f64, horizon: usize },
    #[error("horizon mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("coupled sampling requires the second distribution to dominate the first")]
    DominanceRequired,
    #[error("slot {slot} outside 1..={horizon}")]
    SlotOutOfRange { slot: usize, horizon: usize },
    #[error("invalid EV spec: {0}")]
    InvalidEv(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("unreachable state queried: EV {ev} is connected after slot {slot} with zero survival probability")]
    UnreachableState { ev: usize, slot: usize },
    #[error("no feasible continuation at t = {t} from state {state}")]
    NoFeasibleContinuation { t: usize, state: String },
    #[error("no dispatch candidate has finite expected cost")]
    NoFeasibleDispatch,
    #[error("profile enumeration needs {needed} rollouts (limit {limit}); use Monte Carlo mode")]
    EnumerationTooLarge { needed: f64, limit: f64 },
    #[error("dispatch grid has {size} candidates (limit {limit}); use beam search")]
    GridTooLarge { size: f64, limit: f64 },
    #[error("brute-force oracle size guard exceeded: {0}")]
    OracleTooLarge(String),
    #[error("EV index {index} out of range for {count} EVs")]
    EvIndexOutOfRange { index: usize, count: usize },
    #[error("conditioning on zero-probability slot {slot} for EV {ev}")]
    ZeroProbabilitySlot { ev: usize, slot: usize },
    #[error("empirical record has no days")]
    EmptyRecord,
    #[error("invalid mechanism parameter: {0}")]
    InvalidMechanism(String),
    #[error("invalid config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
