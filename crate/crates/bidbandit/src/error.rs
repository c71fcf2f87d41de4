//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid bid space: {0}")]
    InvalidBidSpace(String),

    #[error("learning rate must be positive and finite, got {0}")]
    InvalidEta(f64),

    #[error("non-finite score in row {item} at bid index {bid_index}")]
    NonFiniteScore { item: usize, bid_index: usize },

    #[error("reward {0} outside [0, 1]; rewards must be normalized before the update")]
    RewardOutOfRange(f64),

    #[error("sampling probability must be in (0, 1], got {0}")]
    InvalidSamplingProb(f64),

    #[error("round {round} outside horizon [1, {horizon}]")]
    RoundOutOfRange { round: u64, horizon: u64 },

    #[error("duplicate record for round {round}, item {item}")]
    DuplicateRecord { round: u64, item: usize },

    #[error("record for round {round} does not belong to the executing batch {batch}")]
    RecordOutsideBatch { round: u64, batch: u64 },

    #[error("boundary {got} out of order; expected boundary {expected}")]
    BoundaryOutOfOrder { got: u64, expected: u64 },

    #[error("period {period} outside [1, {q}]")]
    InvalidPeriod { period: u64, q: u64 },

    #[error("degenerate reward range: r_min {r_min} must be strictly below r_max {r_max}")]
    DegenerateRange { r_min: f64, r_max: f64 },

    #[error("insufficient history: got {got} observations, need at least {need}")]
    InsufficientHistory { got: usize, need: usize },

    #[error("period {period} has zero average traffic volume")]
    ZeroTrafficPeriod { period: usize },

    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("snapshot: {0}")]
    Snapshot(String),

    #[error("snapshot checksum mismatch: file is corrupt or was edited")]
    SnapshotTampered,

    #[error("snapshot was produced under a different config (hash {snapshot} vs {config})")]
    SnapshotConfigMismatch { snapshot: String, config: String },

    #[error("event log: {0}")]
    EventLog(String),

    #[error("missing counterfactual entry for round {round}, item {item}")]
    MissingCounterfactual { round: u64, item: usize },

    #[error("unknown preset `{0}` (expected bench-regret, snowball, or exp3-equiv)")]
    UnknownPreset(String),

    #[error("preset `{name}` failed: {detail}")]
    PresetFailed { name: String, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Process exit code used by the CLI: 1 validation, 2 runtime, 3 preset failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. }
            | Error::InvalidBidSpace(_)
            | Error::InvalidEta(_)
            | Error::DegenerateRange { .. }
            | Error::InsufficientHistory { .. }
            | Error::ZeroTrafficPeriod { .. }
            | Error::SnapshotConfigMismatch { .. }
            | Error::SnapshotTampered
            | Error::Snapshot(_)
            | Error::UnknownPreset(_) => 1,
            Error::PresetFailed { .. } => 3,
            _ => 2,
        }
    }
}
