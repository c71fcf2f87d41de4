//! Exponential-weights learners over a discrete bid grid.
//!
//! One independent learner per item. Each learner keeps cumulative scores
//! per bid, turns them into a sampling distribution via a max-shifted
//! softmax, and absorbs delayed batches of importance-weighted feedback.
//!
//! The update is loss-driven: a bid that was not placed in a round gains
//! exactly 1; the placed bid gains `1 - (1 - reward) / p`, where `p` is the
//! probability the bid had *when it was drawn*. Storing the draw-time
//! probability on [`PlacedBid`] is what keeps the estimator unbiased once
//! feedback arrives batches later, after the policy has moved on.

use rand::Rng;

use crate::error::{Error, Result};

/// The 14-bid grid used as the default action set, in integer cents.
pub const DEFAULT_BID_GRID: [u32; 14] = [1, 3, 5, 7, 9, 11, 13, 15, 17, 20, 25, 30, 35, 40];

/// Discrete, strictly increasing set of bid values in integer cents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BidSpace {
    bids: Vec<u32>,
}

impl BidSpace {
    /// Bids must be >= 1 cent, strictly increasing, and at least two long
    /// (a singleton grid leaves nothing to learn).
    pub fn new(bids: Vec<u32>) -> Result<Self> {
        if bids.len() < 2 {
            return Err(Error::InvalidBidSpace(format!(
                "need at least 2 bids, got {}",
                bids.len()
            )));
        }
        if bids[0] < 1 {
            return Err(Error::InvalidBidSpace("bids must be >= 1 cent".into()));
        }
        if !bids.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidBidSpace(
                "bids must be strictly increasing".into(),
            ));
        }
        Ok(Self { bids })
    }

    pub fn len(&self) -> usize {
        self.bids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bids.is_empty()
    }

    pub fn bids(&self) -> &[u32] {
        &self.bids
    }

    pub fn bid_cents(&self, index: usize) -> u32 {
        self.bids[index]
    }

    pub fn index_of(&self, cents: u32) -> Option<usize> {
        self.bids.binary_search(&cents).ok()
    }
}

impl Default for BidSpace {
    fn default() -> Self {
        Self {
            bids: DEFAULT_BID_GRID.to_vec(),
        }
    }
}

/// Cumulative per-item, per-bid scores plus the round counter.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    scores: Vec<f64>,
    items: usize,
    num_bids: usize,
    /// Last completed round.
    pub round_counter: u64,
}

impl ScoreTable {
    pub fn zeros(items: usize, num_bids: usize) -> Self {
        Self {
            scores: vec![0.0; items * num_bids],
            items,
            num_bids,
            round_counter: 0,
        }
    }

    pub fn items(&self) -> usize {
        self.items
    }

    pub fn num_bids(&self) -> usize {
        self.num_bids
    }

    pub fn row(&self, item: usize) -> &[f64] {
        &self.scores[item * self.num_bids..(item + 1) * self.num_bids]
    }

    pub fn row_mut(&mut self, item: usize) -> &mut [f64] {
        &mut self.scores[item * self.num_bids..(item + 1) * self.num_bids]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.scores.chunks_exact(self.num_bids)
    }

    pub fn set_row(&mut self, item: usize, values: &[f64]) {
        self.row_mut(item).copy_from_slice(values);
    }

    pub fn zero_all(&mut self) {
        self.scores.fill(0.0);
    }
}

/// Sampling distributions for all items, one row per item.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyMatrix {
    probs: Vec<f64>,
    items: usize,
    num_bids: usize,
    pub eta: f64,
}

impl PolicyMatrix {
    pub fn items(&self) -> usize {
        self.items
    }

    pub fn num_bids(&self) -> usize {
        self.num_bids
    }

    pub fn row(&self, item: usize) -> &[f64] {
        &self.probs[item * self.num_bids..(item + 1) * self.num_bids]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.probs.chunks_exact(self.num_bids)
    }
}

/// A bid drawn for one item in one round, together with the probability it
/// was drawn with. The probability is stored here and never recomputed:
/// by the time feedback arrives the live policy is a different one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlacedBid {
    pub round: u64,
    pub item: usize,
    pub bid_index: usize,
    pub sampling_prob: f64,
}

/// Softmax of `eta * scores`, computed with max-subtraction so arbitrarily
/// large score gaps neither overflow nor produce NaN. Entry `i` equals
/// `exp(eta * (x_i - m)) / sum_l exp(eta * (x_l - m))` with `m = max(x)`.
pub fn compute_policy(scores_row: &[f64], eta: f64) -> Result<Vec<f64>> {
    if !eta.is_finite() || eta <= 0.0 {
        return Err(Error::InvalidEta(eta));
    }
    let mut max = f64::NEG_INFINITY;
    for (i, &x) in scores_row.iter().enumerate() {
        if !x.is_finite() {
            return Err(Error::NonFiniteScore {
                item: 0,
                bid_index: i,
            });
        }
        if x > max {
            max = x;
        }
    }
    let mut out = Vec::with_capacity(scores_row.len());
    let mut sum = 0.0;
    for &x in scores_row {
        let z = (eta * (x - max)).exp();
        sum += z;
        out.push(z);
    }
    for z in &mut out {
        *z /= sum;
    }
    Ok(out)
}

/// Score increment one bid receives when a round's feedback is applied.
///
/// Returns 1 for a bid that was not placed; `1 - (1 - reward) / sampling_prob`
/// for the placed bid. The result lies in `(-inf, 1]`.
pub fn incremental_score_gain(placed: bool, reward: f64, sampling_prob: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&reward) {
        return Err(Error::RewardOutOfRange(reward));
    }
    if sampling_prob <= 0.0 || sampling_prob > 1.0 || sampling_prob.is_nan() {
        return Err(Error::InvalidSamplingProb(sampling_prob));
    }
    Ok(gain_unchecked(placed, reward, sampling_prob))
}

#[inline]
fn gain_unchecked(placed: bool, reward: f64, sampling_prob: f64) -> f64 {
    if placed {
        1.0 - (1.0 - reward) / sampling_prob
    } else {
        1.0
    }
}

/// `n` independent exponential-weights learners sharing one bid space.
#[derive(Debug, Clone)]
pub struct Learner {
    space: BidSpace,
    eta: f64,
    scores: ScoreTable,
}

impl Learner {
    /// Fresh learner: all scores zero, so every policy row is uniform.
    pub fn new(space: BidSpace, eta: f64, items: usize) -> Result<Self> {
        if !eta.is_finite() || eta <= 0.0 {
            return Err(Error::InvalidEta(eta));
        }
        if items == 0 {
            return Err(Error::config("items", "need at least one item"));
        }
        let num_bids = space.len();
        Ok(Self {
            space,
            eta,
            scores: ScoreTable::zeros(items, num_bids),
        })
    }

    pub fn space(&self) -> &BidSpace {
        &self.space
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn scores(&self) -> &ScoreTable {
        &self.scores
    }

    pub fn scores_mut(&mut self) -> &mut ScoreTable {
        &mut self.scores
    }

    pub fn items(&self) -> usize {
        self.scores.items()
    }

    /// Current sampling distributions for all items.
    pub fn policy(&self) -> Result<PolicyMatrix> {
        let num_bids = self.space.len();
        let mut probs = Vec::with_capacity(self.items() * num_bids);
        for item in 0..self.items() {
            let row = compute_policy(self.scores.row(item), self.eta).map_err(|e| match e {
                Error::NonFiniteScore { bid_index, .. } => {
                    Error::NonFiniteScore { item, bid_index }
                }
                other => other,
            })?;
            probs.extend_from_slice(&row);
        }
        Ok(PolicyMatrix {
            probs,
            items: self.items(),
            num_bids,
            eta: self.eta,
        })
    }

    /// Zero every score and replace the learning rate; the next policy is
    /// uniform again. Round counters and queues are untouched.
    pub fn reset(&mut self, eta: f64) -> Result<()> {
        if !eta.is_finite() || eta <= 0.0 {
            return Err(Error::InvalidEta(eta));
        }
        self.eta = eta;
        self.scores.zero_all();
        Ok(())
    }

    /// Replace the learning rate, keeping the scores (operator adjustment).
    pub fn set_eta(&mut self, eta: f64) -> Result<()> {
        if !eta.is_finite() || eta <= 0.0 {
            return Err(Error::InvalidEta(eta));
        }
        self.eta = eta;
        Ok(())
    }

    /// Apply one released batch. Records are processed in ascending
    /// (round, item) order so replays are bit-for-bit reproducible; the sum
    /// itself is order-free mathematically. Validation happens up front, so
    /// a rejected batch leaves the scores untouched.
    pub fn apply_batch_update(&mut self, released: &[(PlacedBid, f64)]) -> Result<()> {
        for (placed, reward) in released {
            if !(0.0..=1.0).contains(reward) {
                return Err(Error::RewardOutOfRange(*reward));
            }
            if placed.sampling_prob <= 0.0 || placed.sampling_prob > 1.0 || placed.sampling_prob.is_nan() {
                return Err(Error::InvalidSamplingProb(placed.sampling_prob));
            }
            if placed.item >= self.scores.items() || placed.bid_index >= self.space.len() {
                return Err(Error::config(
                    "released",
                    format!(
                        "record (round {}, item {}, bid index {}) outside learner shape",
                        placed.round, placed.item, placed.bid_index
                    ),
                ));
            }
        }
        let mut order: Vec<usize> = (0..released.len()).collect();
        order.sort_by_key(|&i| (released[i].0.round, released[i].0.item));
        for idx in order {
            let (placed, reward) = &released[idx];
            let row = self.scores.row_mut(placed.item);
            for (i, slot) in row.iter_mut().enumerate() {
                *slot += gain_unchecked(i == placed.bid_index, *reward, placed.sampling_prob);
            }
        }
        Ok(())
    }
}

/// Draw one index from a probability row with a single uniform variate
/// (inverse-CDF walk). Returns the index and the probability it carried.
pub fn sample_index<R: Rng + ?Sized>(row: &[f64], rng: &mut R) -> (usize, f64) {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return (i, p);
        }
    }
    // Rounding can leave acc marginally below 1; fall back to the last
    // entry with positive mass so a zero-probability bid is never returned.
    let i = row
        .iter()
        .rposition(|&p| p > 0.0)
        .expect("policy row has no positive mass");
    (i, row[i])
}

impl PolicyMatrix {
    /// Sample one bid per item, recording draw-time probabilities.
    /// Stream `i` must be the dedicated sampling stream of item `i`.
    pub fn sample_bids<R: Rng>(&self, round: u64, streams: &mut [R]) -> Vec<PlacedBid> {
        assert_eq!(streams.len(), self.items, "one RNG stream per item");
        let mut out = Vec::with_capacity(self.items);
        for (item, rng) in streams.iter_mut().enumerate() {
            let (bid_index, sampling_prob) = sample_index(self.row(item), rng);
            out.push(PlacedBid {
                round,
                item,
                bid_index,
                sampling_prob,
            });
        }
        out
    }
}
