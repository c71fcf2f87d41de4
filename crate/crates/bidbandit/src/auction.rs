//! Simulated blackbox auction environment.
//!
//! Each decision round aggregates a whole contest of single-slot auctions.
//! Per auction the environment draws the highest competing bid, a click
//! coin, a conversion coin, and a sale value; winning requires beating the
//! competitor, payment happens per click (competitor's bid under second
//! price, own bid under first price), and value is realized on a click that
//! converts.
//!
//! All draws for a contest come from a stream keyed by (seed, item, round)
//! and are made *before* the bid is looked at, so the same contest can be
//! replayed under every candidate bid with common random numbers. The
//! counterfactual profit at the actually placed bid is therefore identical
//! to the realized one, bit for bit.

use rand::Rng;
use rand_distr::{Distribution, LogNormal, Poisson};
use serde::{Deserialize, Serialize};

use crate::bandit::BidSpace;
use crate::error::{Error, Result};
use crate::rng;

/// Competitor bids may not exceed this many cents.
pub const MAX_COMPETITOR_CENTS: u32 = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MechanismKind {
    SecondPrice,
    FirstPrice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Equal bids win with probability one half.
    #[default]
    CoinFlip,
    Win,
    Lose,
}

/// Distribution of the highest competing bid per auction, in cents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CompetitorModel {
    Fixed {
        cents: u32,
    },
    Uniform {
        lo: u32,
        hi: u32,
    },
    /// Discrete distribution over a handful of price points.
    Atoms {
        entries: Vec<AtomEntry>,
    },
    /// Log-normal in cents, rounded and clamped to the legal support.
    LogNormal {
        location: f64,
        scale: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtomEntry {
    pub cents: u32,
    pub weight: f64,
}

impl CompetitorModel {
    fn validate(&self) -> Result<()> {
        match self {
            CompetitorModel::Fixed { cents } => {
                if *cents > MAX_COMPETITOR_CENTS {
                    return Err(Error::config(
                        "environment.competitor.cents",
                        format!("support must lie within [0, {MAX_COMPETITOR_CENTS}] cents"),
                    ));
                }
            }
            CompetitorModel::Uniform { lo, hi } => {
                if lo > hi || *hi > MAX_COMPETITOR_CENTS {
                    return Err(Error::config(
                        "environment.competitor",
                        format!("need lo <= hi <= {MAX_COMPETITOR_CENTS}, got [{lo}, {hi}]"),
                    ));
                }
            }
            CompetitorModel::Atoms { entries } => {
                if entries.is_empty() {
                    return Err(Error::config(
                        "environment.competitor.entries",
                        "need at least one atom",
                    ));
                }
                let total: f64 = entries.iter().map(|e| e.weight).sum();
                if (total - 1.0).abs() >= 1e-9 || total.is_nan() {
                    return Err(Error::config(
                        "environment.competitor.entries",
                        format!("atom weights must sum to 1, got {total}"),
                    ));
                }
                for e in entries {
                    if e.weight.is_nan() || e.weight <= 0.0 || e.cents > MAX_COMPETITOR_CENTS {
                        return Err(Error::config(
                            "environment.competitor.entries",
                            "weights must be positive and support within [0, 200] cents",
                        ));
                    }
                }
            }
            CompetitorModel::LogNormal { location, scale } => {
                if !location.is_finite() || !scale.is_finite() || *scale <= 0.0 {
                    return Err(Error::config(
                        "environment.competitor",
                        "log-normal needs finite location and positive scale",
                    ));
                }
            }
        }
        Ok(())
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        match self {
            CompetitorModel::Fixed { cents } => *cents,
            CompetitorModel::Uniform { lo, hi } => rng.random_range(*lo..=*hi),
            CompetitorModel::Atoms { entries } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for e in entries {
                    acc += e.weight;
                    if u < acc {
                        return e.cents;
                    }
                }
                entries.last().expect("validated non-empty").cents
            }
            CompetitorModel::LogNormal { location, scale } => {
                let v = LogNormal::new(*location, *scale)
                    .expect("validated parameters")
                    .sample(rng);
                (v.round().max(0.0) as u64).min(MAX_COMPETITOR_CENTS as u64) as u32
            }
        }
    }
}

/// Auction mechanism: allocation, payment, click behavior, tie handling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismSpec {
    pub kind: MechanismKind,
    pub competitor: CompetitorModel,
    /// Probability a won auction yields a click.
    pub click_prob: f64,
    #[serde(default)]
    pub tie_break: TieBreak,
}

/// Distribution of sale values in cents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValueDist {
    Fixed { cents: u64 },
    Uniform { lo: u64, hi: u64 },
    LogNormal { location: f64, scale: f64 },
}

impl ValueDist {
    fn validate(&self) -> Result<()> {
        match self {
            ValueDist::Fixed { .. } => Ok(()),
            ValueDist::Uniform { lo, hi } => {
                if lo > hi {
                    Err(Error::config(
                        "environment.valuation.value",
                        format!("need lo <= hi, got [{lo}, {hi}]"),
                    ))
                } else {
                    Ok(())
                }
            }
            ValueDist::LogNormal { location, scale } => {
                if !location.is_finite() || !scale.is_finite() || *scale <= 0.0 {
                    Err(Error::config(
                        "environment.valuation.value",
                        "log-normal needs finite location and positive scale",
                    ))
                } else {
                    Ok(())
                }
            }
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match self {
            ValueDist::Fixed { cents } => *cents,
            ValueDist::Uniform { lo, hi } => rng.random_range(*lo..=*hi),
            ValueDist::LogNormal { location, scale } => {
                let v = LogNormal::new(*location, *scale)
                    .expect("validated parameters")
                    .sample(rng);
                v.round().max(0.0) as u64
            }
        }
    }
}

/// Hidden valuation process: how often a click converts and what it is worth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValuationModel {
    pub conversion_prob: f64,
    pub value: ValueDist,
}

/// Contest arrival process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Arrivals {
    /// Poisson contest sizes with the given mean per most-active period.
    Poisson { rate: f64 },
    /// Deterministic contest size (scaled by the period factor, rounded).
    Fixed { count: u64 },
}

/// Traffic volume model: arrivals scaled by intra-day period factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficModel {
    pub arrivals: Arrivals,
    /// One multiplier per intra-day period; the most active period is 1.
    pub period_factors: Vec<f64>,
}

/// Aggregated feedback for one (round, item) contest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AggregatedOutcome {
    pub round: u64,
    pub item: usize,
    pub bid_cents: u32,
    pub clicks: u64,
    pub payment_cents: u64,
    pub gain_cents: u64,
    pub contest_size: u64,
}

/// Signed profit of one aggregated outcome, in cents.
pub fn profit(outcome: &AggregatedOutcome) -> i64 {
    outcome.gain_cents as i64 - outcome.payment_cents as i64
}

/// One auction's pre-drawn randomness; outcome under any bid is a pure
/// function of these fields.
#[derive(Debug, Clone, Copy)]
struct AuctionDraw {
    competitor_cents: u32,
    click_u: f64,
    conv_u: f64,
    value_cents: u64,
    tie_u: f64,
}

/// Per-item auction environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuctionEnv {
    pub mechanism: MechanismSpec,
    pub valuation: ValuationModel,
    pub traffic: TrafficModel,
}

impl AuctionEnv {
    pub fn validate(&self, q: u64) -> Result<()> {
        self.mechanism.competitor.validate()?;
        if !(0.0..=1.0).contains(&self.mechanism.click_prob) {
            return Err(Error::config(
                "environment.click_prob",
                format!("must be in [0, 1], got {}", self.mechanism.click_prob),
            ));
        }
        self.valuation.value.validate()?;
        if !(0.0..=1.0).contains(&self.valuation.conversion_prob) {
            return Err(Error::config(
                "environment.valuation.conversion_prob",
                format!("must be in [0, 1], got {}", self.valuation.conversion_prob),
            ));
        }
        match self.traffic.arrivals {
            Arrivals::Poisson { rate } => {
                if !rate.is_finite() || rate <= 0.0 {
                    return Err(Error::config(
                        "environment.traffic.arrivals.rate",
                        format!("must be positive and finite, got {rate}"),
                    ));
                }
            }
            Arrivals::Fixed { .. } => {}
        }
        let factors = &self.traffic.period_factors;
        if factors.len() != q as usize {
            return Err(Error::config(
                "environment.traffic.period_factors",
                format!("need exactly q = {q} factors, got {}", factors.len()),
            ));
        }
        if !factors.iter().all(|&f| f > 0.0 && f <= 1.0) {
            return Err(Error::config(
                "environment.traffic.period_factors",
                "factors must lie in (0, 1]",
            ));
        }
        let max = factors.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max != 1.0 {
            return Err(Error::config(
                "environment.traffic.period_factors",
                format!("most active period must be exactly 1, max is {max}"),
            ));
        }
        Ok(())
    }

    /// Draw the full contest randomness for (item, round). Draw order is
    /// fixed and bid-independent: contest size first, then per auction the
    /// competitor bid, click coin, conversion coin, value, tie coin.
    fn draw_contest(&self, item: usize, round: u64, period: u64, seed: u64) -> Vec<AuctionDraw> {
        let mut rng = rng::contest_stream(seed, item, round);
        let factor = self.traffic.period_factors[(period - 1) as usize];
        let size = match self.traffic.arrivals {
            Arrivals::Poisson { rate } => {
                let lambda = rate * factor;
                Poisson::new(lambda)
                    .expect("validated rate")
                    .sample(&mut rng) as u64
            }
            Arrivals::Fixed { count } => (count as f64 * factor).round() as u64,
        };
        let mut draws = Vec::with_capacity(size as usize);
        for _ in 0..size {
            draws.push(AuctionDraw {
                competitor_cents: self.mechanism.competitor.sample(&mut rng),
                click_u: rng.random(),
                conv_u: rng.random(),
                value_cents: self.valuation.value.sample(&mut rng),
                tie_u: rng.random(),
            });
        }
        draws
    }

    fn evaluate(&self, draws: &[AuctionDraw], bid_cents: u32) -> (u64, u64, u64) {
        let mut clicks = 0u64;
        let mut payment = 0u64;
        let mut gain = 0u64;
        for a in draws {
            let won = if bid_cents > a.competitor_cents {
                true
            } else if bid_cents == a.competitor_cents {
                match self.mechanism.tie_break {
                    TieBreak::CoinFlip => a.tie_u < 0.5,
                    TieBreak::Win => true,
                    TieBreak::Lose => false,
                }
            } else {
                false
            };
            if !won {
                continue;
            }
            if a.click_u < self.mechanism.click_prob {
                clicks += 1;
                payment += match self.mechanism.kind {
                    MechanismKind::SecondPrice => a.competitor_cents as u64,
                    MechanismKind::FirstPrice => bid_cents as u64,
                };
                if a.conv_u < self.valuation.conversion_prob {
                    gain += a.value_cents;
                }
            }
        }
        (clicks, payment, gain)
    }

    /// Run the contest for one placed bid and return the aggregated outcome.
    pub fn run_contest(
        &self,
        item: usize,
        bid_cents: u32,
        round: u64,
        period: u64,
        seed: u64,
    ) -> AggregatedOutcome {
        let draws = self.draw_contest(item, round, period, seed);
        let (clicks, payment_cents, gain_cents) = self.evaluate(&draws, bid_cents);
        AggregatedOutcome {
            round,
            item,
            bid_cents,
            clicks,
            payment_cents,
            gain_cents,
            contest_size: draws.len() as u64,
        }
    }

    /// Replay the identical contest under every bid in the space and return
    /// the profit each bid would have earned.
    pub fn counterfactual_profits(
        &self,
        item: usize,
        round: u64,
        period: u64,
        seed: u64,
        space: &BidSpace,
    ) -> Vec<i64> {
        let draws = self.draw_contest(item, round, period, seed);
        space
            .bids()
            .iter()
            .map(|&bid| {
                let (_, payment, gain) = self.evaluate(&draws, bid);
                gain as i64 - payment as i64
            })
            .collect()
    }

    /// Replay the contest and return (clicks, profit) per bid.
    pub fn counterfactual_clicks_and_profits(
        &self,
        item: usize,
        round: u64,
        period: u64,
        seed: u64,
        space: &BidSpace,
    ) -> Vec<(u64, i64)> {
        let draws = self.draw_contest(item, round, period, seed);
        space
            .bids()
            .iter()
            .map(|&bid| {
                let (clicks, payment, gain) = self.evaluate(&draws, bid);
                (clicks, gain as i64 - payment as i64)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_factors(q: usize) -> Vec<f64> {
        vec![1.0; q]
    }

    fn simple_env(competitor: CompetitorModel, click: f64, conv: f64, value: u64) -> AuctionEnv {
        AuctionEnv {
            mechanism: MechanismSpec {
                kind: MechanismKind::SecondPrice,
                competitor,
                click_prob: click,
                tie_break: TieBreak::CoinFlip,
            },
            valuation: ValuationModel {
                conversion_prob: conv,
                value: ValueDist::Fixed { cents: value },
            },
            traffic: TrafficModel {
                arrivals: Arrivals::Fixed { count: 10 },
                period_factors: flat_factors(1),
            },
        }
    }

    #[test]
    fn bid_below_support_never_wins() {
        let env = simple_env(CompetitorModel::Uniform { lo: 10, hi: 20 }, 1.0, 1.0, 50);
        for seed in 0..20 {
            let o = env.run_contest(0, 5, 1, 1, seed);
            assert_eq!(o.clicks, 0);
            assert_eq!(o.payment_cents, 0);
            assert_eq!(o.gain_cents, 0);
        }
    }

    /// Second price, one competitor fixed at 5 cents, always-clicking,
    /// never-converting bidder at 9 cents over a 10-auction contest:
    /// brute force over the auctions gives 10 clicks, 50 cents paid, 0 gain.
    #[test]
    fn fixed_competitor_outcome_matches_brute_force() {
        let env = simple_env(CompetitorModel::Fixed { cents: 5 }, 1.0, 0.0, 50);
        let o = env.run_contest(0, 9, 1, 1, 42);
        assert_eq!(o.contest_size, 10);
        assert_eq!(o.clicks, 10);
        assert_eq!(o.payment_cents, 50);
        assert_eq!(o.gain_cents, 0);
        assert_eq!(profit(&o), -50);
    }

    #[test]
    fn empty_contest_gives_zero_outcome() {
        let mut env = simple_env(CompetitorModel::Fixed { cents: 5 }, 1.0, 1.0, 50);
        env.traffic.arrivals = Arrivals::Fixed { count: 0 };
        let o = env.run_contest(0, 9, 1, 1, 1);
        assert_eq!(o.contest_size, 0);
        assert_eq!((o.clicks, o.payment_cents, o.gain_cents), (0, 0, 0));
    }

    #[test]
    fn profit_is_gain_minus_payment() {
        let base = AggregatedOutcome {
            round: 1,
            item: 0,
            bid_cents: 9,
            clicks: 3,
            payment_cents: 40,
            gain_cents: 100,
            contest_size: 5,
        };
        assert_eq!(profit(&base), 60);
        let zero = AggregatedOutcome {
            payment_cents: 0,
            gain_cents: 0,
            clicks: 0,
            contest_size: 0,
            ..base
        };
        assert_eq!(profit(&zero), 0);
        let costly = AggregatedOutcome {
            payment_cents: 70,
            gain_cents: 0,
            ..base
        };
        assert_eq!(profit(&costly), -70);
    }

    #[test]
    fn second_price_never_charges_above_the_bid() {
        let env = simple_env(CompetitorModel::Uniform { lo: 0, hi: 40 }, 0.8, 0.3, 30);
        for seed in 0..50 {
            for bid in [1u32, 9, 20, 40] {
                let o = env.run_contest(0, bid, 1, 1, seed);
                assert!(o.payment_cents <= bid as u64 * o.clicks);
                assert!(o.clicks <= o.contest_size);
            }
        }
    }

    #[test]
    fn identical_seeds_give_identical_outcomes() {
        let env = simple_env(CompetitorModel::Uniform { lo: 0, hi: 40 }, 0.5, 0.1, 120);
        for round in 1..=30 {
            let a = env.run_contest(2, 17, round, 1, 9);
            let b = env.run_contest(2, 17, round, 1, 9);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn counterfactual_matches_realized_at_the_placed_bid() {
        let env = simple_env(CompetitorModel::Uniform { lo: 5, hi: 35 }, 0.7, 0.4, 80);
        let space = BidSpace::default();
        for seed in 0..20 {
            for round in 1..=10 {
                for (i, &bid) in space.bids().iter().enumerate() {
                    let realized = env.run_contest(0, bid, round, 1, seed);
                    let cf = env.counterfactual_profits(0, round, 1, seed, &space);
                    assert_eq!(cf[i], profit(&realized));
                    if bid < 5 {
                        assert_eq!(cf[i], 0);
                    }
                }
            }
        }
    }

    #[test]
    fn clicks_weakly_increase_in_bid_under_replay() {
        let env = simple_env(CompetitorModel::Uniform { lo: 0, hi: 40 }, 0.6, 0.2, 60);
        let space = BidSpace::default();
        for seed in 0..30 {
            let cf = env.counterfactual_clicks_and_profits(0, 1, 1, seed, &space);
            for w in cf.windows(2) {
                assert!(w[0].0 <= w[1].0, "clicks must be monotone in bid");
            }
        }
    }

    #[test]
    fn tie_break_rules_are_honored() {
        let mut env = simple_env(CompetitorModel::Fixed { cents: 9 }, 1.0, 0.0, 50);
        env.mechanism.tie_break = TieBreak::Win;
        let o = env.run_contest(0, 9, 1, 1, 3);
        assert_eq!(o.clicks, o.contest_size);
        env.mechanism.tie_break = TieBreak::Lose;
        let o = env.run_contest(0, 9, 1, 1, 3);
        assert_eq!(o.clicks, 0);
        env.mechanism.tie_break = TieBreak::CoinFlip;
        let mut total = 0u64;
        for seed in 0..200 {
            total += env.run_contest(0, 9, 1, 1, seed).clicks;
        }
        // 2000 fair coin flips; expect roughly half.
        assert!(total > 800 && total < 1200, "coin-flip ties off: {total}");
    }

    #[test]
    fn validation_rejects_out_of_support_competitors_and_bad_probs() {
        let mut env = simple_env(CompetitorModel::Fixed { cents: 500 }, 1.0, 1.0, 50);
        assert!(env.validate(1).is_err());
        env.mechanism.competitor = CompetitorModel::Fixed { cents: 50 };
        env.mechanism.click_prob = 1.5;
        assert!(env.validate(1).is_err());
        env.mechanism.click_prob = 0.5;
        env.traffic.period_factors = vec![0.5];
        assert!(env.validate(1).is_err(), "max factor must be exactly 1");
        env.traffic.period_factors = vec![1.0];
        assert!(env.validate(1).is_ok());
    }
}
