//! Reward normalization: raw aggregated profit in cents becomes the [0, 1]
//! reward the learner consumes.
//!
//! Two steps, in this order: scale by the period's traffic ratio (market
//! level, shared across items), then min-max scale by the item's historical
//! profit quantiles and clamp into [0, 1]. Both steps are affine and
//! monotone, so within a period the ranking of bids by raw profit survives
//! normalization wherever the clamp is inactive.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum history length accepted by the quantile fit.
pub const MIN_HISTORY: usize = 20;

/// Per-item reward range: historical 5th and 95th profit percentiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardRange {
    pub r_min: f64,
    pub r_max: f64,
}

impl RewardRange {
    pub fn new(r_min: f64, r_max: f64) -> Result<Self> {
        if !r_min.is_finite() || !r_max.is_finite() || r_min >= r_max {
            return Err(Error::DegenerateRange { r_min, r_max });
        }
        Ok(Self { r_min, r_max })
    }
}

/// Fitted normalization constants for a run.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationConfig {
    /// One traffic ratio per intra-day period; the most active period is 1.
    alphas: Vec<f64>,
    /// One reward range per item.
    ranges: Vec<RewardRange>,
}

impl NormalizationConfig {
    pub fn new(alphas: Vec<f64>, ranges: Vec<RewardRange>) -> Result<Self> {
        if alphas.is_empty() {
            return Err(Error::config("normalization.alphas", "need q entries"));
        }
        if !alphas.iter().all(|&a| a > 0.0 && a <= 1.0) {
            return Err(Error::config(
                "normalization.alphas",
                "every alpha must lie in (0, 1]",
            ));
        }
        let max = alphas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max != 1.0 {
            return Err(Error::config(
                "normalization.alphas",
                format!("most active period must have alpha exactly 1, max is {max}"),
            ));
        }
        if ranges.is_empty() {
            return Err(Error::config(
                "normalization.minimax",
                "need one range per item",
            ));
        }
        for r in &ranges {
            RewardRange::new(r.r_min, r.r_max)?;
        }
        Ok(Self { alphas, ranges })
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn ranges(&self) -> &[RewardRange] {
        &self.ranges
    }

    pub fn range(&self, item: usize) -> RewardRange {
        self.ranges[item]
    }

    pub fn periods(&self) -> u64 {
        self.alphas.len() as u64
    }

    /// Full pipeline for one observation: traffic scaling then min-max.
    /// `period` is 1-based within the batch.
    pub fn normalize_reward(&self, item: usize, period: u64, profit_cents: i64) -> Result<f64> {
        let scaled = traffic_normalize(profit_cents, period, &self.alphas)?;
        let r = self.ranges[item];
        Ok(minimax_normalize(scaled, r.r_min, r.r_max))
    }
}

/// Scale a round's aggregated profit by its period's traffic ratio.
pub fn traffic_normalize(profit_cents: i64, period: u64, alphas: &[f64]) -> Result<f64> {
    if period < 1 || period > alphas.len() as u64 {
        return Err(Error::InvalidPeriod {
            period,
            q: alphas.len() as u64,
        });
    }
    Ok(alphas[(period - 1) as usize] * profit_cents as f64)
}

/// Affine map of `value` from [r_min, r_max] onto [0, 1], clamped.
pub fn minimax_normalize(value: f64, r_min: f64, r_max: f64) -> f64 {
    ((value - r_min) / (r_max - r_min)).clamp(0.0, 1.0)
}

/// Percentile with linear interpolation between order statistics
/// (`percent` in [0, 100]; rank = percent * (m - 1) / 100).
fn percentile(sorted: &[f64], percent: f64) -> f64 {
    let m = sorted.len();
    let rank = percent * (m - 1) as f64 / 100.0;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = rank - lo as f64;
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Fit one item's reward range from its profit history: empirical 5th and
/// 95th percentiles. Requires at least [`MIN_HISTORY`] observations and a
/// non-degenerate spread.
pub fn fit_quantiles(history: &[f64]) -> Result<RewardRange> {
    if history.len() < MIN_HISTORY {
        return Err(Error::InsufficientHistory {
            got: history.len(),
            need: MIN_HISTORY,
        });
    }
    let mut sorted = history.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite history"));
    let r_min = percentile(&sorted, 5.0);
    let r_max = percentile(&sorted, 95.0);
    RewardRange::new(r_min, r_max)
}

/// Fit the per-period traffic ratios from observed per-period volumes:
/// mean volume of each period divided by the largest period mean. The most
/// active period comes out exactly 1.
pub fn fit_alphas(per_period_volumes: &[Vec<f64>]) -> Result<Vec<f64>> {
    if per_period_volumes.is_empty() {
        return Err(Error::config(
            "normalization.traffic_history",
            "need at least one period",
        ));
    }
    let mut means = Vec::with_capacity(per_period_volumes.len());
    for (idx, volumes) in per_period_volumes.iter().enumerate() {
        if volumes.is_empty() {
            return Err(Error::ZeroTrafficPeriod { period: idx + 1 });
        }
        let mean = volumes.iter().sum::<f64>() / volumes.len() as f64;
        if mean.is_nan() || mean <= 0.0 {
            return Err(Error::ZeroTrafficPeriod { period: idx + 1 });
        }
        means.push(mean);
    }
    let max = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(means.into_iter().map(|m| m / max).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn traffic_scaling_is_plain_multiplication() {
        let alphas = [1.0, 0.25, 0.5];
        assert_eq!(traffic_normalize(400, 1, &alphas).unwrap(), 400.0);
        assert_eq!(traffic_normalize(400, 2, &alphas).unwrap(), 100.0);
        assert_eq!(traffic_normalize(0, 3, &alphas).unwrap(), 0.0);
        assert!(traffic_normalize(10, 0, &alphas).is_err());
        assert!(traffic_normalize(10, 4, &alphas).is_err());
    }

    #[test]
    fn minimax_endpoints_midpoint_and_clamp() {
        assert_eq!(minimax_normalize(-10.0, -10.0, 30.0), 0.0);
        assert_eq!(minimax_normalize(30.0, -10.0, 30.0), 1.0);
        assert_eq!(minimax_normalize(10.0, -10.0, 30.0), 0.5);
        assert_eq!(minimax_normalize(-20.0, -10.0, 30.0), 0.0);
        assert_eq!(minimax_normalize(99.0, -10.0, 30.0), 1.0);
    }

    #[test]
    fn degenerate_range_rejected() {
        assert!(RewardRange::new(5.0, 5.0).is_err());
        assert!(RewardRange::new(7.0, 5.0).is_err());
        assert!(RewardRange::new(f64::NAN, 5.0).is_err());
    }

    #[test]
    fn uniform_history_gives_the_expected_quantiles() {
        let history: Vec<f64> = (0..=100).map(|x| x as f64).collect();
        let r = fit_quantiles(&history).unwrap();
        assert!((r.r_min - 5.0).abs() < 1e-12);
        assert!((r.r_max - 95.0).abs() < 1e-12);
    }

    #[test]
    fn constant_history_rejected_as_degenerate() {
        let history = vec![3.0; 50];
        assert!(matches!(
            fit_quantiles(&history),
            Err(Error::DegenerateRange { .. })
        ));
    }

    #[test]
    fn short_history_rejected() {
        let history: Vec<f64> = (0..19).map(|x| x as f64).collect();
        assert!(matches!(
            fit_quantiles(&history),
            Err(Error::InsufficientHistory { got: 19, need: 20 })
        ));
    }

    #[test]
    fn equal_traffic_gives_all_ones() {
        let volumes = vec![vec![50.0, 50.0]; 4];
        assert_eq!(fit_alphas(&volumes).unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn alpha_ratios_follow_period_means() {
        let volumes = vec![vec![100.0, 100.0], vec![40.0, 60.0], vec![25.0, 25.0]];
        let alphas = fit_alphas(&volumes).unwrap();
        assert_eq!(alphas, vec![1.0, 0.5, 0.25]);
    }

    #[test]
    fn zero_traffic_period_rejected() {
        let volumes = vec![vec![100.0], vec![0.0]];
        assert!(matches!(
            fit_alphas(&volumes),
            Err(Error::ZeroTrafficPeriod { period: 2 })
        ));
    }

    #[test]
    fn config_requires_max_alpha_exactly_one() {
        let ranges = vec![RewardRange::new(-1.0, 1.0).unwrap()];
        assert!(NormalizationConfig::new(vec![0.9, 0.5], ranges.clone()).is_err());
        assert!(NormalizationConfig::new(vec![1.0, 0.5], ranges).is_ok());
    }

    proptest! {
        /// Composed traffic + minimax output lies in [0, 1] for any input.
        #[test]
        fn composed_normalization_stays_in_unit_interval(
            profit in -1_000_000i64..1_000_000,
            period in 1u64..=8,
            r_min in -1e5f64..0.0,
            span in 1e-3f64..1e5,
        ) {
            let alphas = vec![1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3];
            let cfg = NormalizationConfig::new(
                alphas,
                vec![RewardRange::new(r_min, r_min + span).unwrap()],
            ).unwrap();
            let r = cfg.normalize_reward(0, period, profit).unwrap();
            prop_assert!((0.0..=1.0).contains(&r));
        }

        /// Within one period and the unclamped region the map is strictly
        /// increasing, so the best bid by raw profit stays the best bid by
        /// normalized reward.
        #[test]
        fn argmax_preserved_in_unclamped_region(
            profits in proptest::collection::vec(-400i64..700, 2..14),
            period in 1u64..=4,
        ) {
            let cfg = NormalizationConfig::new(
                vec![1.0, 1.0, 1.0, 1.0],
                vec![RewardRange::new(-500.0, 800.0).unwrap()],
            ).unwrap();
            let rewards: Vec<f64> = profits
                .iter()
                .map(|&p| cfg.normalize_reward(0, period, p).unwrap())
                .collect();
            let argmax_profit = profits
                .iter()
                .enumerate()
                .max_by_key(|(i, p)| (**p, std::cmp::Reverse(*i)))
                .unwrap()
                .0;
            let argmax_reward = rewards
                .iter()
                .enumerate()
                .max_by(|(ia, a), (ib, b)| a.partial_cmp(b).unwrap().then(ib.cmp(ia)))
                .unwrap()
                .0;
            prop_assert_eq!(argmax_profit, argmax_reward);
        }

        /// Higher raw profit never maps to a lower normalized reward.
        #[test]
        fn normalization_is_monotone_in_profit(
            a in -1_000_000i64..1_000_000,
            b in -1_000_000i64..1_000_000,
            period in 1u64..=4,
        ) {
            let cfg = NormalizationConfig::new(
                vec![1.0, 0.5, 0.25, 0.125],
                vec![RewardRange::new(-500.0, 800.0).unwrap()],
            ).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let r_lo = cfg.normalize_reward(0, period, lo).unwrap();
            let r_hi = cfg.normalize_reward(0, period, hi).unwrap();
            prop_assert!(r_lo <= r_hi);
        }
    }
}
