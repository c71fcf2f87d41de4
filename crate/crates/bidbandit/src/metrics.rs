//! Evaluation over completed runs: hindsight regret against the best fixed
//! bid, policy-concentration diagnostics, product-group summaries, and
//! heatmap exports.
//!
//! Regret uses counterfactuals replayed with common random numbers, so the
//! realized trajectory is compared against what every other bid would have
//! earned in the *same* contests; the hindsight best then dominates the
//! realized profit per item and regret never goes negative by replay noise
//! alone.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::bandit::BidSpace;
use crate::config::{MetricsConfig, ResolvedConfig};
use crate::error::{Error, Result};
use crate::normalize::NormalizationConfig;
use crate::pipeline::BatchGrid;
use crate::runlog::{EventLog, EventRow};

/// Replayed per-bid profits for every (round, item) contest.
#[derive(Debug, Clone)]
pub struct CounterfactualTable {
    rounds: u64,
    items: usize,
    num_bids: usize,
    profits: Vec<i64>,
}

impl CounterfactualTable {
    /// Replay rounds 1..=upto for every item under every bid.
    pub fn build(cfg: &ResolvedConfig, upto: u64) -> Self {
        let num_bids = cfg.space.len();
        let mut profits = Vec::with_capacity(upto as usize * cfg.items * num_bids);
        for round in 1..=upto {
            let period = cfg.grid.period_of(round);
            for item in 0..cfg.items {
                let row = cfg.envs[item]
                    .counterfactual_profits(item, round, period, cfg.seed, &cfg.space);
                profits.extend_from_slice(&row);
            }
        }
        Self {
            rounds: upto,
            items: cfg.items,
            num_bids,
            profits,
        }
    }

    pub fn rounds(&self) -> u64 {
        self.rounds
    }

    /// Per-bid profits for one (round, item); rounds are 1-based.
    pub fn profits(&self, round: u64, item: usize) -> Result<&[i64]> {
        if round < 1 || round > self.rounds || item >= self.items {
            return Err(Error::MissingCounterfactual { round, item });
        }
        let base = ((round - 1) as usize * self.items + item) * self.num_bids;
        Ok(&self.profits[base..base + self.num_bids])
    }
}

/// Per-item regret, in business units (cents) and in the normalized reward
/// units the learner actually optimizes.
#[derive(Debug, Clone)]
pub struct ItemRegret {
    pub item: usize,
    pub best_fixed_bid_cents: u32,
    pub hindsight_profit_cents: i64,
    pub realized_profit_cents: i64,
    pub regret_cents: i64,
    pub hindsight_reward: f64,
    pub realized_reward: f64,
    pub regret_reward: f64,
}

#[derive(Debug, Clone)]
pub struct RegretReport {
    pub items: Vec<ItemRegret>,
    pub total_regret_cents: i64,
    pub total_regret_reward: f64,
    /// 2 sqrt(q T |B| log |B|) + delta, per item.
    pub per_item_bound: f64,
    /// n times the per-item bound.
    pub total_bound: f64,
    pub rounds_covered: u64,
}

/// Bound from the sublinear-regret guarantee at the given shape.
pub fn regret_bound(q: u64, horizon: u64, num_bids: usize, delta: u64) -> f64 {
    let b = num_bids as f64;
    2.0 * (q as f64 * horizon as f64 * b * b.ln()).sqrt() + delta as f64
}

/// Hindsight regret per item over the given rows. Pass a prefix of the log
/// to measure regret at an earlier horizon.
pub fn compute_regret(
    rows: &[EventRow],
    cf: &CounterfactualTable,
    norm: &NormalizationConfig,
    grid: &BatchGrid,
    space: &BidSpace,
) -> Result<RegretReport> {
    let items = cf.items;
    let num_bids = space.len();
    let mut cents_by_bid = vec![0i64; items * num_bids];
    let mut reward_by_bid = vec![0f64; items * num_bids];
    let mut realized_cents = vec![0i64; items];
    let mut realized_reward = vec![0f64; items];
    let mut rounds_covered = 0u64;

    for row in rows {
        rounds_covered = rounds_covered.max(row.round);
        let period = grid.period_of(row.round);
        let profits = cf.profits(row.round, row.item)?;
        for (b, &p) in profits.iter().enumerate() {
            cents_by_bid[row.item * num_bids + b] += p;
            reward_by_bid[row.item * num_bids + b] += norm.normalize_reward(row.item, period, p)?;
        }
        let own = row.profit_cents();
        realized_cents[row.item] += own;
        realized_reward[row.item] += norm.normalize_reward(row.item, period, own)?;
    }

    let per_item_bound = regret_bound(grid.q(), rounds_covered, num_bids, grid.delta());
    let mut out = Vec::with_capacity(items);
    let mut total_cents = 0i64;
    let mut total_reward = 0f64;
    for item in 0..items {
        let cents_row = &cents_by_bid[item * num_bids..(item + 1) * num_bids];
        let reward_row = &reward_by_bid[item * num_bids..(item + 1) * num_bids];
        let (best_idx, &hindsight_cents) = cents_row
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| a.cmp(b).then(ib.cmp(ia)))
            .expect("bid space is non-empty");
        let hindsight_reward = reward_row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let regret_cents = hindsight_cents - realized_cents[item];
        let regret_reward = hindsight_reward - realized_reward[item];
        total_cents += regret_cents;
        total_reward += regret_reward;
        out.push(ItemRegret {
            item,
            best_fixed_bid_cents: space.bid_cents(best_idx),
            hindsight_profit_cents: hindsight_cents,
            realized_profit_cents: realized_cents[item],
            regret_cents,
            hindsight_reward,
            realized_reward: realized_reward[item],
            regret_reward,
        });
    }
    Ok(RegretReport {
        items: out,
        total_regret_cents: total_cents,
        total_regret_reward: total_reward,
        per_item_bound,
        total_bound: per_item_bound * items as f64,
        rounds_covered,
    })
}

/// Shannon entropy of one policy row, in nats; 0 for a degenerate row,
/// log |B| for a uniform one.
pub fn policy_entropy(row: &[f64]) -> f64 {
    let mut h = 0.0;
    for &p in row {
        if p > 0.0 {
            h -= p * p.ln();
        }
    }
    h
}

/// Product-group taxonomy used by the summary table.
pub const GROUP_NAMES: [&str; 3] = ["profitable", "unprofitable", "low_traffic"];

#[derive(Debug, Clone, Copy)]
pub struct GroupShare {
    pub name: &'static str,
    pub item_count: usize,
    pub products_pct: f64,
    pub clicks_pct: f64,
    pub costs_pct: f64,
    pub gain_pct: f64,
}

#[derive(Debug, Clone)]
pub struct GroupSummary {
    pub rows: [GroupShare; 3],
    /// Group index (0..3) per item, for heatmap aggregation.
    pub assignment: Vec<usize>,
}

/// Split items into profitable / unprofitable / low-traffic groups and
/// report each group's share of products, clicks, costs, and gain. Empty
/// groups come out as zero rows rather than errors.
pub fn group_summary(
    rows: &[EventRow],
    items: usize,
    days: u64,
    cfg: &MetricsConfig,
) -> GroupSummary {
    let mut clicks = vec![0u64; items];
    let mut costs = vec![0u64; items];
    let mut gains = vec![0u64; items];
    for row in rows {
        clicks[row.item] += row.clicks;
        costs[row.item] += row.payment_cents;
        gains[row.item] += row.gain_cents;
    }
    let assignment: Vec<usize> = (0..items)
        .map(|i| {
            let daily_clicks = clicks[i] as f64 / days.max(1) as f64;
            if daily_clicks < cfg.low_traffic_daily_clicks {
                2
            } else {
                let ratio = if costs[i] > 0 {
                    gains[i] as f64 / costs[i] as f64
                } else if gains[i] > 0 {
                    f64::INFINITY
                } else {
                    0.0
                };
                if ratio >= cfg.profitable_gain_cost_ratio {
                    0
                } else {
                    1
                }
            }
        })
        .collect();

    let total_clicks: u64 = clicks.iter().sum();
    let total_costs: u64 = costs.iter().sum();
    let total_gain: u64 = gains.iter().sum();
    let pct = |part: u64, total: u64| {
        if total == 0 {
            0.0
        } else {
            100.0 * part as f64 / total as f64
        }
    };

    let mut out = Vec::with_capacity(3);
    for (g, name) in GROUP_NAMES.iter().enumerate() {
        let members: Vec<usize> = (0..items).filter(|&i| assignment[i] == g).collect();
        let g_clicks: u64 = members.iter().map(|&i| clicks[i]).sum();
        let g_costs: u64 = members.iter().map(|&i| costs[i]).sum();
        let g_gain: u64 = members.iter().map(|&i| gains[i]).sum();
        out.push(GroupShare {
            name,
            item_count: members.len(),
            products_pct: pct(members.len() as u64, items as u64),
            clicks_pct: pct(g_clicks, total_clicks),
            costs_pct: pct(g_costs, total_costs),
            gain_pct: pct(g_gain, total_gain),
        });
    }
    GroupSummary {
        rows: [out[0], out[1], out[2]],
        assignment,
    }
}

/// Bids-by-days grid. Rows follow the bid space order; days are batches.
#[derive(Debug, Clone)]
pub struct HeatmapGrid {
    pub bids: Vec<u32>,
    pub days: u64,
    pub cells: Vec<f64>,
}

impl HeatmapGrid {
    fn zero(space: &BidSpace, days: u64) -> Self {
        Self {
            bids: space.bids().to_vec(),
            days,
            cells: vec![0.0; space.len() * days as usize],
        }
    }

    pub fn cell(&self, bid_row: usize, day: u64) -> f64 {
        self.cells[bid_row * self.days as usize + (day - 1) as usize]
    }

    fn cell_mut(&mut self, bid_row: usize, day: u64) -> &mut f64 {
        &mut self.cells[bid_row * self.days as usize + (day - 1) as usize]
    }

    pub fn column_sum(&self, day: u64) -> f64 {
        (0..self.bids.len()).map(|b| self.cell(b, day)).sum()
    }

    /// Affine rescale by the grid's own max-abs so values land in [-1, 1]
    /// (the concealment convention used for profit exports).
    pub fn rescale_to_unit(&mut self) {
        let max_abs = self.cells.iter().fold(0.0f64, |m, &c| m.max(c.abs()));
        if max_abs > 0.0 {
            for c in &mut self.cells {
                *c /= max_abs;
            }
        }
    }
}

/// How many periods each bid was placed per day, per item: placement
/// columns always sum to q.
pub fn placement_grid(
    rows: &[EventRow],
    item: usize,
    space: &BidSpace,
    grid: &BatchGrid,
) -> HeatmapGrid {
    let mut out = HeatmapGrid::zero(space, grid.batch_count());
    for row in rows.iter().filter(|r| r.item == item) {
        let day = grid.batch_index(row.round).expect("row within horizon");
        let bid_row = space.index_of(row.bid_cents).expect("bid from the space");
        *out.cell_mut(bid_row, day) += 1.0;
    }
    out
}

/// Mean realized profit per (bid, day) cell for one item, rescaled to
/// [-1, 1] by the grid's own max-abs. Cells without placements stay 0.
pub fn profit_grid(
    rows: &[EventRow],
    item: usize,
    space: &BidSpace,
    grid: &BatchGrid,
) -> HeatmapGrid {
    let mut sums = HeatmapGrid::zero(space, grid.batch_count());
    let mut counts = HeatmapGrid::zero(space, grid.batch_count());
    for row in rows.iter().filter(|r| r.item == item) {
        let day = grid.batch_index(row.round).expect("row within horizon");
        let bid_row = space.index_of(row.bid_cents).expect("bid from the space");
        *sums.cell_mut(bid_row, day) += row.profit_cents() as f64;
        *counts.cell_mut(bid_row, day) += 1.0;
    }
    for (s, c) in sums.cells.iter_mut().zip(counts.cells.iter()) {
        if *c > 0.0 {
            *s /= *c;
        }
    }
    sums.rescale_to_unit();
    sums
}

/// Placement counts summed over a set of items (cell maximum m * q).
pub fn aggregate_placement_grid(
    rows: &[EventRow],
    members: &[usize],
    space: &BidSpace,
    grid: &BatchGrid,
) -> HeatmapGrid {
    let mut out = HeatmapGrid::zero(space, grid.batch_count());
    for row in rows.iter().filter(|r| members.contains(&r.item)) {
        let day = grid.batch_index(row.round).expect("row within horizon");
        let bid_row = space.index_of(row.bid_cents).expect("bid from the space");
        *out.cell_mut(bid_row, day) += 1.0;
    }
    out
}

/// Mean profit per cell pooled over a set of items, rescaled to [-1, 1].
pub fn aggregate_profit_grid(
    rows: &[EventRow],
    members: &[usize],
    space: &BidSpace,
    grid: &BatchGrid,
) -> HeatmapGrid {
    let mut sums = HeatmapGrid::zero(space, grid.batch_count());
    let mut counts = HeatmapGrid::zero(space, grid.batch_count());
    for row in rows.iter().filter(|r| members.contains(&r.item)) {
        let day = grid.batch_index(row.round).expect("row within horizon");
        let bid_row = space.index_of(row.bid_cents).expect("bid from the space");
        *sums.cell_mut(bid_row, day) += row.profit_cents() as f64;
        *counts.cell_mut(bid_row, day) += 1.0;
    }
    for (s, c) in sums.cells.iter_mut().zip(counts.cells.iter()) {
        if *c > 0.0 {
            *s /= *c;
        }
    }
    sums.rescale_to_unit();
    sums
}

fn write_grid(path: &Path, grid: &HeatmapGrid, decimals: Option<usize>) -> Result<()> {
    let mut s = String::new();
    let _ = write!(s, "bid");
    for day in 1..=grid.days {
        let _ = write!(s, "\tday_{day}");
    }
    let _ = writeln!(s);
    for (b, bid) in grid.bids.iter().enumerate() {
        let _ = write!(s, "{bid}");
        for day in 1..=grid.days {
            match decimals {
                Some(d) => {
                    let _ = write!(s, "\t{:.*}", d, grid.cell(b, day));
                }
                None => {
                    let _ = write!(s, "\t{}", grid.cell(b, day) as i64);
                }
            }
        }
        let _ = writeln!(s);
    }
    fs::write(path, s)?;
    Ok(())
}

/// Write per-item and per-group heatmaps into `out_dir`; returns the paths.
pub fn export_heatmaps(
    rows: &[EventRow],
    summary: &GroupSummary,
    space: &BidSpace,
    grid: &BatchGrid,
    items: usize,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for item in 0..items {
        let p = out_dir.join(format!("heatmap_profit_item_{item}.tsv"));
        write_grid(&p, &profit_grid(rows, item, space, grid), Some(6))?;
        written.push(p);
        let p = out_dir.join(format!("heatmap_placement_item_{item}.tsv"));
        write_grid(&p, &placement_grid(rows, item, space, grid), None)?;
        written.push(p);
    }
    for (g, name) in GROUP_NAMES.iter().enumerate() {
        let members: Vec<usize> = (0..items).filter(|&i| summary.assignment[i] == g).collect();
        if members.is_empty() {
            continue;
        }
        let p = out_dir.join(format!("heatmap_profit_group_{name}.tsv"));
        write_grid(
            &p,
            &aggregate_profit_grid(rows, &members, space, grid),
            Some(6),
        )?;
        written.push(p);
        let p = out_dir.join(format!("heatmap_placement_group_{name}.tsv"));
        write_grid(
            &p,
            &aggregate_placement_grid(rows, &members, space, grid),
            None,
        )?;
        written.push(p);
    }
    Ok(written)
}

pub fn write_group_summary(path: &Path, summary: &GroupSummary) -> Result<()> {
    let mut s = String::from("group\tproducts_pct\tclicks_pct\tcosts_pct\tgain_pct\n");
    for row in &summary.rows {
        let _ = writeln!(
            s,
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            row.name, row.products_pct, row.clicks_pct, row.costs_pct, row.gain_pct
        );
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn write_regret_report(path: &Path, report: &RegretReport) -> Result<()> {
    let mut s = String::new();
    let _ = writeln!(s, "rounds_covered={}", report.rounds_covered);
    let _ = writeln!(s, "per_item_bound={:.6}", report.per_item_bound);
    let _ = writeln!(s, "total_bound={:.6}", report.total_bound);
    let _ = writeln!(s, "total_regret_cents={}", report.total_regret_cents);
    let _ = writeln!(s, "total_regret_reward={:.6}", report.total_regret_reward);
    let _ = writeln!(
        s,
        "item\tbest_fixed_bid\thindsight_cents\trealized_cents\tregret_cents\thindsight_reward\trealized_reward\tregret_reward\tbound_ratio"
    );
    for item in &report.items {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            item.item,
            item.best_fixed_bid_cents,
            item.hindsight_profit_cents,
            item.realized_profit_cents,
            item.regret_cents,
            item.hindsight_reward,
            item.realized_reward,
            item.regret_reward,
            item.regret_reward / report.per_item_bound
        );
    }
    fs::write(path, s)?;
    Ok(())
}

/// Verify from the log alone that no round ever sampled from state it was
/// not entitled to see: snapshot versions advance exactly with boundaries
/// and logged events, and every release that happened before round t covers
/// only batches up to J(t - 1) - delta.
pub fn audit_information_flow(log: &EventLog, grid: &BatchGrid) -> Result<()> {
    let q = grid.q();
    let delta = grid.delta();
    let mut max_released: i64 = 0;
    let mut last_round = 0u64;
    for row in &log.rows {
        let t = row.round;
        if t != last_round {
            // Entering a new round: releases recorded at earlier boundaries
            // are now visible. The newest permissible batch is
            // floor((t-1)/q) - delta.
            let allowed = (t.saturating_sub(1) / q) as i64 - delta as i64;
            if max_released > allowed.max(0) {
                return Err(Error::EventLog(format!(
                    "round {t} saw batch {max_released} released, allowed at most {allowed}"
                )));
            }
            last_round = t;
        }
        let boundaries_before = (t - 1) / q;
        let events_before = log.events.iter().filter(|e| e.round() <= t).count() as u64;
        let expected_version = 1 + boundaries_before + events_before;
        if row.snapshot_version != expected_version {
            return Err(Error::EventLog(format!(
                "round {t} item {} sampled from snapshot {} but expected {expected_version}",
                row.item, row.snapshot_version
            )));
        }
        if row.release_batch != 0 {
            if t % q != 0 {
                return Err(Error::EventLog(format!(
                    "non-boundary round {t} carries release_batch {}",
                    row.release_batch
                )));
            }
            let k = t / q;
            if k <= delta || row.release_batch != k - delta {
                return Err(Error::EventLog(format!(
                    "boundary {k} released batch {} but should release {}",
                    row.release_batch,
                    k as i64 - delta as i64
                )));
            }
            max_released = max_released.max(row.release_batch as i64);
        }
    }
    Ok(())
}
