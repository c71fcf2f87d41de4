//! Bid optimization for repeated blackbox auctions under batched, delayed,
//! aggregated feedback.
//!
//! The crate bundles:
//! - [`bandit`]: per-item exponential-weights learners over a discrete bid
//!   grid, with the delayed importance-weighted batch update;
//! - [`auction`]: a seeded auction simulator whose contests can be replayed
//!   under every candidate bid (common random numbers);
//! - [`pipeline`]: the batch grid and delay queue;
//! - [`normalize`]: traffic and min-max reward normalization into [0, 1];
//! - [`engine`]: the deterministic two-stream event loop;
//! - [`metrics`]: hindsight regret, entropy diagnostics, group summaries,
//!   heatmap exports, and the information-flow audit;
//! - [`runner`] / [`presets`]: experiment orchestration, snapshots, resume,
//!   and the pinned benchmark experiments.
//!
//! Every run is a pure function of (config, master seed): identical inputs
//! produce byte-identical event logs and artifacts, and a stopped run
//! resumes bit-exactly from its snapshot plus the log.

pub mod auction;
pub mod bandit;
pub mod config;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod normalize;
pub mod pipeline;
pub mod presets;
pub mod rng;
pub mod runlog;
pub mod runner;
pub mod snapshot;

pub use auction::{AggregatedOutcome, AuctionEnv, MechanismSpec, TrafficModel, ValuationModel};
pub use bandit::{BidSpace, Learner, PlacedBid, PolicyMatrix, ScoreTable};
pub use config::{ExperimentConfig, ResolvedConfig};
pub use engine::Engine;
pub use error::{Error, Result};
pub use metrics::{CounterfactualTable, RegretReport};
pub use pipeline::{BatchGrid, DelayQueue, PendingRecord};
pub use runlog::{EventLog, EventRow};
pub use runner::{resume, run, RunArtifacts, RunOptions};
pub use snapshot::Snapshot;
