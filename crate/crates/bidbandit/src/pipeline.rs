//! Batch grid and delay queue.
//!
//! The horizon splits into batches of q rounds; feedback for a round in
//! batch k becomes visible only once batch k + delta has completed. The
//! queue enforces that: records enter during their own batch and leave
//! exactly once, at the right boundary, or end up in the unreleased tail
//! if the horizon cuts them off.

use std::collections::{BTreeMap, HashSet};

use crate::auction::AggregatedOutcome;
use crate::bandit::PlacedBid;
use crate::error::{Error, Result};

/// Equal-size batch partition of the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchGrid {
    q: u64,
    delta: u64,
    horizon: u64,
}

impl BatchGrid {
    /// `horizon` must be a positive multiple of `q`.
    pub fn new(q: u64, delta: u64, horizon: u64) -> Result<Self> {
        if q == 0 {
            return Err(Error::config("rounds_per_batch", "q must be positive"));
        }
        if horizon == 0 || !horizon.is_multiple_of(q) {
            return Err(Error::config(
                "horizon",
                format!("horizon {horizon} must be a positive multiple of q = {q}"),
            ));
        }
        Ok(Self { q, delta, horizon })
    }

    pub fn q(&self) -> u64 {
        self.q
    }

    pub fn delta(&self) -> u64 {
        self.delta
    }

    pub fn horizon(&self) -> u64 {
        self.horizon
    }

    /// Number of batches M = T / q.
    pub fn batch_count(&self) -> u64 {
        self.horizon / self.q
    }

    /// Batch index J(t) = ceil(t / q) for t in [1, T].
    pub fn batch_index(&self, round: u64) -> Result<u64> {
        if round < 1 || round > self.horizon {
            return Err(Error::RoundOutOfRange {
                round,
                horizon: self.horizon,
            });
        }
        Ok(round.div_ceil(self.q))
    }

    /// Whether round `t` closes a batch.
    pub fn is_boundary(&self, round: u64) -> bool {
        round >= 1 && round <= self.horizon && round.is_multiple_of(self.q)
    }

    /// 1-based position of `t` within its batch (the intra-day period).
    pub fn period_of(&self, round: u64) -> u64 {
        (round - 1) % self.q + 1
    }

    /// Batch released when boundary `k` completes: k - delta, if positive.
    pub fn released_batch(&self, boundary: u64) -> Option<u64> {
        (boundary > self.delta).then(|| boundary - self.delta)
    }
}

/// A placed bid waiting for its feedback to be released. The normalized
/// reward is absent until release time.
#[derive(Debug, Clone, PartialEq)]
pub struct PendingRecord {
    pub placed: PlacedBid,
    pub outcome: AggregatedOutcome,
    pub normalized_reward: Option<f64>,
}

/// Delay queue over the batch grid. Single writer; boundaries must be
/// driven in increasing order.
#[derive(Debug, Clone)]
pub struct DelayQueue {
    grid: BatchGrid,
    pending: BTreeMap<u64, Vec<PendingRecord>>,
    seen: HashSet<(u64, usize)>,
    boundaries_done: u64,
    enqueued: u64,
    released: u64,
}

impl DelayQueue {
    pub fn new(grid: BatchGrid) -> Self {
        Self {
            grid,
            pending: BTreeMap::new(),
            seen: HashSet::new(),
            boundaries_done: 0,
            enqueued: 0,
            released: 0,
        }
    }

    /// Restore a queue mid-run: `boundaries_done` boundaries already
    /// processed, `records` are the still-pending ones in (round, item)
    /// order. Used when resuming from a snapshot.
    pub fn restore(
        grid: BatchGrid,
        boundaries_done: u64,
        records: Vec<PendingRecord>,
    ) -> Result<Self> {
        let mut queue = Self::new(grid);
        queue.boundaries_done = boundaries_done;
        for rec in records {
            let batch = grid.batch_index(rec.placed.round)?;
            if !queue.seen.insert((rec.placed.round, rec.placed.item)) {
                return Err(Error::DuplicateRecord {
                    round: rec.placed.round,
                    item: rec.placed.item,
                });
            }
            queue.enqueued += 1;
            queue.pending.entry(batch).or_default().push(rec);
        }
        Ok(queue)
    }

    pub fn boundaries_done(&self) -> u64 {
        self.boundaries_done
    }

    /// (enqueued, released, still pending) counts for conservation checks.
    pub fn counts(&self) -> (u64, u64, u64) {
        let pending: u64 = self.pending.values().map(|v| v.len() as u64).sum();
        (self.enqueued, self.released, pending)
    }

    /// Store a record. It must belong to the batch currently executing and
    /// be the first record for its (round, item) pair.
    pub fn enqueue(&mut self, record: PendingRecord) -> Result<()> {
        let batch = self.grid.batch_index(record.placed.round)?;
        let executing = self.boundaries_done + 1;
        if batch != executing {
            return Err(Error::RecordOutsideBatch {
                round: record.placed.round,
                batch: executing,
            });
        }
        let key = (record.placed.round, record.placed.item);
        if !self.seen.insert(key) {
            return Err(Error::DuplicateRecord {
                round: key.0,
                item: key.1,
            });
        }
        self.enqueued += 1;
        self.pending.entry(batch).or_default().push(record);
        Ok(())
    }

    /// Whether a given (round, item) record is queued and not yet released.
    pub fn contains(&self, round: u64, item: usize) -> bool {
        self.pending
            .values()
            .flatten()
            .any(|r| r.placed.round == round && r.placed.item == item)
    }

    /// Complete boundary `k` and take the batch it releases (k - delta).
    /// Boundaries must be completed exactly once each, in order.
    pub fn release_at_boundary(&mut self, boundary: u64) -> Result<Vec<PendingRecord>> {
        let expected = self.boundaries_done + 1;
        if boundary != expected {
            return Err(Error::BoundaryOutOfOrder {
                got: boundary,
                expected,
            });
        }
        self.boundaries_done = boundary;
        let Some(batch) = self.grid.released_batch(boundary) else {
            return Ok(Vec::new());
        };
        let mut records = self.pending.remove(&batch).unwrap_or_default();
        records.sort_by_key(|r| (r.placed.round, r.placed.item));
        self.released += records.len() as u64;
        Ok(records)
    }

    /// Records that will never be observed within the horizon (the last
    /// `delta` batches once all boundaries have run). Reported, not
    /// force-released.
    pub fn unreleased_tail(&self) -> Vec<&PendingRecord> {
        self.pending.values().flatten().collect()
    }
}
