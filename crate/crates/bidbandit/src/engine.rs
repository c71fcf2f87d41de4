//! Deterministic two-stream event loop.
//!
//! The bid stream runs every round: it samples one bid per item from the
//! latest *committed* policy snapshot and plays the round's contests. The
//! update stream runs at batch boundaries: it normalizes and releases the
//! delayed batch, updates every learner, and commits a new snapshot. The
//! boundary work happens at the end of the closing round, so the first bid
//! of the next day already sees the new snapshot.
//!
//! Logically these are two desynchronized streams; they execute here as one
//! single-threaded loop (optionally sharding items across threads), which
//! keeps runs bit-for-bit reproducible. Between boundaries the committed
//! policy is untouched, so sampling distributions are constant within a
//! batch by construction.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::auction::{profit, AggregatedOutcome};
use crate::bandit::{sample_index, Learner, PlacedBid, PolicyMatrix, ScoreTable};
use crate::config::ResolvedConfig;
use crate::error::{Error, Result};
use crate::pipeline::{DelayQueue, PendingRecord};
use crate::rng;
use crate::runlog::{EventRow, LogEvent};
use crate::snapshot::Snapshot;

/// Everything one executed round produced.
#[derive(Debug, Clone)]
pub struct RoundOutput {
    /// Out-of-band events that took effect at this round (logged first).
    pub events: Vec<LogEvent>,
    /// One row per item, in item order.
    pub rows: Vec<EventRow>,
    /// Boundary index completed at the end of this round, if any.
    pub boundary: Option<u64>,
    /// Batch released at that boundary.
    pub released_batch: Option<u64>,
    pub released_count: usize,
}

pub struct Engine {
    cfg: ResolvedConfig,
    learner: Learner,
    policy: PolicyMatrix,
    version: u64,
    queue: DelayQueue,
    streams: Vec<ChaCha8Rng>,
    round: u64,
    pending_events: Vec<LogEvent>,
    pool: Option<rayon::ThreadPool>,
}

impl Engine {
    /// Fresh engine at round 0 with snapshot version 1 (the uniform policy).
    pub fn new(cfg: ResolvedConfig, parallel: usize) -> Result<Self> {
        let learner = Learner::new(cfg.space.clone(), cfg.eta, cfg.items)?;
        let policy = learner.policy()?;
        let queue = DelayQueue::new(cfg.grid);
        let streams = (0..cfg.items)
            .map(|i| rng::sampling_stream(cfg.seed, i))
            .collect();
        let pool = build_pool(parallel)?;
        Ok(Self {
            cfg,
            learner,
            policy,
            version: 1,
            queue,
            streams,
            round: 0,
            pending_events: Vec::new(),
            pool,
        })
    }

    /// Continue from a snapshot. `pending` must hold the records of every
    /// batch not yet released at the snapshot round (rebuilt from the event
    /// log), in (round, item) order.
    pub fn from_snapshot(
        cfg: ResolvedConfig,
        snap: &Snapshot,
        pending: Vec<PendingRecord>,
        parallel: usize,
    ) -> Result<Self> {
        if snap.config_hash != cfg.config_hash {
            return Err(Error::SnapshotConfigMismatch {
                snapshot: snap.config_hash.clone(),
                config: cfg.config_hash.clone(),
            });
        }
        if snap.bids != cfg.space.bids() {
            return Err(Error::Snapshot("bid space differs from config".into()));
        }
        if snap.scores.len() != cfg.items || snap.rng_pos.len() != cfg.items {
            return Err(Error::Snapshot("item count differs from config".into()));
        }
        if snap.round > cfg.grid.horizon() {
            return Err(Error::Snapshot(format!(
                "snapshot round {} beyond horizon {}",
                snap.round,
                cfg.grid.horizon()
            )));
        }
        let mut learner = Learner::new(cfg.space.clone(), snap.eta, cfg.items)?;
        for (item, row) in snap.scores.iter().enumerate() {
            if row.len() != cfg.space.len() {
                return Err(Error::Snapshot(format!(
                    "score row {item} has {} entries, expected {}",
                    row.len(),
                    cfg.space.len()
                )));
            }
            learner.scores_mut().set_row(item, row);
        }
        learner.scores_mut().round_counter = snap.round;
        let policy = learner.policy()?;
        let streams = (0..cfg.items)
            .map(|i| {
                let mut s = rng::sampling_stream(cfg.seed, i);
                s.set_word_pos(snap.rng_pos[i]);
                s
            })
            .collect();
        let boundaries_done = snap.round / cfg.grid.q();
        let queue = DelayQueue::restore(cfg.grid, boundaries_done, pending)?;
        let pool = build_pool(parallel)?;
        Ok(Self {
            cfg,
            learner,
            policy,
            version: snap.snapshot_version,
            queue,
            streams,
            round: snap.round,
            pending_events: Vec::new(),
            pool,
        })
    }

    pub fn config(&self) -> &ResolvedConfig {
        &self.cfg
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn policy(&self) -> &PolicyMatrix {
        &self.policy
    }

    pub fn scores(&self) -> &ScoreTable {
        self.learner.scores()
    }

    pub fn eta(&self) -> f64 {
        self.learner.eta()
    }

    pub fn queue(&self) -> &DelayQueue {
        &self.queue
    }

    pub fn finished(&self) -> bool {
        self.round >= self.cfg.grid.horizon()
    }

    /// Adopt a new learning rate mid-run without touching scores (operator
    /// adjustment on resume). Takes effect for the next round and is logged
    /// there as an eta-change event.
    pub fn change_eta(&mut self, eta: f64) -> Result<()> {
        self.learner.set_eta(eta)?;
        self.policy = self.learner.policy()?;
        self.version += 1;
        self.pending_events.push(LogEvent::EtaChange {
            round: self.round + 1,
            eta,
        });
        Ok(())
    }

    /// Execute one round: bid stream, contests, enqueue; at a boundary also
    /// release, update, and commit.
    pub fn advance_round(&mut self) -> Result<RoundOutput> {
        let t = self.round + 1;
        if t > self.cfg.grid.horizon() {
            return Err(Error::RoundOutOfRange {
                round: t,
                horizon: self.cfg.grid.horizon(),
            });
        }
        let mut events = std::mem::take(&mut self.pending_events);
        if let Some(reset) = self.cfg.reset {
            if reset.round == t {
                self.learner.reset(reset.eta)?;
                self.policy = self.learner.policy()?;
                self.version += 1;
                events.push(LogEvent::Reset {
                    round: t,
                    eta: reset.eta,
                });
            }
        }

        let period = self.cfg.grid.period_of(t);
        let sampled_version = self.version;

        let results: Vec<(PlacedBid, AggregatedOutcome)> = {
            let policy = &self.policy;
            let space = &self.cfg.space;
            let envs = &self.cfg.envs;
            let seed = self.cfg.seed;
            let work = move |(item, rng): (usize, &mut ChaCha8Rng)| {
                let (bid_index, sampling_prob) = sample_index(policy.row(item), rng);
                let bid_cents = space.bid_cents(bid_index);
                let placed = PlacedBid {
                    round: t,
                    item,
                    bid_index,
                    sampling_prob,
                };
                let outcome = envs[item].run_contest(item, bid_cents, t, period, seed);
                (placed, outcome)
            };
            match &self.pool {
                Some(pool) => {
                    pool.install(|| self.streams.par_iter_mut().enumerate().map(work).collect())
                }
                None => self.streams.iter_mut().enumerate().map(work).collect(),
            }
        };

        for (placed, outcome) in &results {
            self.queue.enqueue(PendingRecord {
                placed: *placed,
                outcome: *outcome,
                normalized_reward: None,
            })?;
        }

        let mut boundary = None;
        let mut released_batch = None;
        let mut released_count = 0;
        if self.cfg.grid.is_boundary(t) {
            let k = self.cfg.grid.batch_index(t)?;
            boundary = Some(k);
            released_batch = self.cfg.grid.released_batch(k);
            let mut records = self.queue.release_at_boundary(k)?;
            if !records.is_empty() {
                released_count = records.len();
                let mut updates = Vec::with_capacity(records.len());
                for rec in &mut records {
                    let reward = self.cfg.norm.normalize_reward(
                        rec.placed.item,
                        self.cfg.grid.period_of(rec.placed.round),
                        profit(&rec.outcome),
                    )?;
                    rec.normalized_reward = Some(reward);
                    updates.push((rec.placed, reward));
                }
                self.learner.apply_batch_update(&updates)?;
            }
            self.policy = self.learner.policy()?;
            self.version += 1;
        }

        let release_column = released_batch.unwrap_or(0);
        let rows = results
            .into_iter()
            .map(|(placed, outcome)| EventRow {
                round: t,
                period,
                item: placed.item,
                bid_cents: outcome.bid_cents,
                sampling_prob: placed.sampling_prob,
                contest_size: outcome.contest_size,
                clicks: outcome.clicks,
                payment_cents: outcome.payment_cents,
                gain_cents: outcome.gain_cents,
                snapshot_version: sampled_version,
                release_batch: release_column,
            })
            .collect();

        self.learner.scores_mut().round_counter = t;
        self.round = t;
        Ok(RoundOutput {
            events,
            rows,
            boundary,
            released_batch,
            released_count,
        })
    }

    /// Snapshot of the current state, good for a bit-exact resume.
    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            config_hash: self.cfg.config_hash.clone(),
            round: self.round,
            snapshot_version: self.version,
            eta: self.learner.eta(),
            config_eta: self.cfg.eta,
            bids: self.cfg.space.bids().to_vec(),
            scores: (0..self.cfg.items)
                .map(|i| self.learner.scores().row(i).to_vec())
                .collect(),
            rng_pos: self.streams.iter().map(|s| s.get_word_pos()).collect(),
        }
    }
}

fn build_pool(parallel: usize) -> Result<Option<rayon::ThreadPool>> {
    if parallel <= 1 {
        return Ok(None);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel)
        .build()
        .map_err(|e| Error::config("parallel", e.to_string()))?;
    Ok(Some(pool))
}
