//! Engine-level behavior of the two-stream schedule.

use std::path::Path;

use bidbandit::auction::{
    Arrivals, AuctionEnv, CompetitorModel, MechanismKind, MechanismSpec, TieBreak, TrafficModel,
    ValuationModel, ValueDist,
};
use bidbandit::config::{
    EtaSpec, ExperimentConfig, LearningConfig, MetricsConfig, NormalizationSection, ResetSpec,
};
use bidbandit::normalize::RewardRange;
use bidbandit::runlog::LogEvent;
use bidbandit::Engine;

fn small_config(items: usize, q: u64, delta: u64, horizon: u64) -> ExperimentConfig {
    ExperimentConfig {
        seed: 99,
        items,
        rounds_per_batch: q,
        delay_batches: delta,
        horizon,
        bid_space: None,
        learning: LearningConfig {
            eta: EtaSpec::Value(0.2),
            reset: None,
        },
        environment: Some(AuctionEnv {
            mechanism: MechanismSpec {
                kind: MechanismKind::SecondPrice,
                competitor: CompetitorModel::Uniform { lo: 3, hi: 30 },
                click_prob: 0.9,
                tie_break: TieBreak::CoinFlip,
            },
            valuation: ValuationModel {
                conversion_prob: 0.5,
                value: ValueDist::Uniform { lo: 10, hi: 60 },
            },
            traffic: TrafficModel {
                arrivals: Arrivals::Poisson { rate: 15.0 },
                period_factors: vec![1.0; q as usize],
            },
        }),
        environments: None,
        normalization: NormalizationSection {
            alphas: Some(vec![1.0; q as usize]),
            minimax: Some(RewardRange {
                r_min: -150.0,
                r_max: 250.0,
            }),
            ..Default::default()
        },
        out_dir: None,
        metrics: MetricsConfig::default(),
    }
}

fn build_engine(cfg: &ExperimentConfig) -> Engine {
    let resolved = cfg.validate_and_resolve(Path::new(".")).unwrap();
    Engine::new(resolved, 1).unwrap()
}

/// Horizon of one batch with delay 1: the single boundary commits but has
/// nothing to release; policies stay uniform throughout.
#[test]
fn one_batch_horizon_with_delay_is_a_noop() {
    let cfg = small_config(2, 8, 1, 8);
    let mut engine = build_engine(&cfg);
    let mut rows = Vec::new();
    let mut releases = 0;
    while !engine.finished() {
        let out = engine.advance_round().unwrap();
        releases += out.released_count;
        rows.extend(out.rows);
    }
    assert_eq!(releases, 0);
    assert!(rows.iter().all(|r| r.sampling_prob == 1.0 / 14.0));
    assert!(rows.iter().all(|r| r.snapshot_version == 1));
    assert_eq!(engine.version(), 2, "the boundary still commits a snapshot");
    let (enqueued, released, pending) = engine.queue().counts();
    assert_eq!((enqueued, released, pending), (16, 0, 16));
}

/// One-round batches with no delay reduce to per-round updates.
#[test]
fn unit_batches_update_every_round() {
    let cfg = small_config(1, 1, 0, 100);
    let mut engine = build_engine(&cfg);
    for t in 1..=100u64 {
        let out = engine.advance_round().unwrap();
        assert_eq!(out.boundary, Some(t));
        assert_eq!(out.released_batch, Some(t));
        assert_eq!(out.released_count, 1);
        // Every bid gains at least the exploration term each round.
        assert!(engine.scores().row(0).iter().all(|&x| x != 0.0));
    }
    let (enqueued, released, pending) = engine.queue().counts();
    assert_eq!((enqueued, released, pending), (100, 100, 0));
}

/// Between boundaries the committed policy is identical round to round.
#[test]
fn policy_constant_within_each_batch() {
    let cfg = small_config(2, 8, 1, 48);
    let mut engine = build_engine(&cfg);
    let mut last_policy = engine.policy().clone();
    let mut last_version = engine.version();
    while !engine.finished() {
        let out = engine.advance_round().unwrap();
        let t = engine.round();
        if out.boundary.is_none() {
            assert_eq!(engine.version(), last_version, "round {t}");
            assert_eq!(engine.policy(), &last_policy, "round {t}");
        } else {
            assert_eq!(engine.version(), last_version + 1, "round {t}");
            last_version = engine.version();
            last_policy = engine.policy().clone();
        }
    }
}

/// Replayed counterfactual profit at the placed bid equals the realized
/// profit bit for bit, with the engine's own period/seed plumbing.
#[test]
fn counterfactual_coherence_through_the_engine() {
    let cfg = small_config(3, 4, 1, 40);
    let resolved = cfg.validate_and_resolve(Path::new(".")).unwrap();
    let mut engine = Engine::new(resolved.clone(), 1).unwrap();
    while !engine.finished() {
        let out = engine.advance_round().unwrap();
        for row in &out.rows {
            let cf = resolved.envs[row.item].counterfactual_profits(
                row.item,
                row.round,
                resolved.grid.period_of(row.round),
                resolved.seed,
                &resolved.space,
            );
            let idx = resolved.space.index_of(row.bid_cents).unwrap();
            assert_eq!(cf[idx], row.profit_cents());
        }
    }
}

/// Total profit across items per round equals the sum of the per-item
/// aggregated profits — the multi-item reward is additive, exactly.
#[test]
fn multi_item_profit_is_additive() {
    let cfg = small_config(4, 4, 0, 20);
    let mut engine = build_engine(&cfg);
    while !engine.finished() {
        let out = engine.advance_round().unwrap();
        let total: i64 = out.rows.iter().map(|r| r.profit_cents()).sum();
        let componentwise: i64 = out
            .rows
            .iter()
            .map(|r| r.gain_cents as i64 - r.payment_cents as i64)
            .sum();
        assert_eq!(total, componentwise);
    }
}

/// A scheduled reset zeroes the scores and swaps the learning rate at the
/// start of its round: that round samples uniformly again.
#[test]
fn reset_reinitializes_mid_run() {
    let mut cfg = small_config(1, 4, 0, 40);
    cfg.learning.eta = EtaSpec::Value(1.0);
    cfg.learning.reset = Some(ResetSpec {
        round: 21,
        eta: 0.1,
    });
    let mut engine = build_engine(&cfg);
    let mut reset_events = Vec::new();
    let mut rows = Vec::new();
    while !engine.finished() {
        let out = engine.advance_round().unwrap();
        reset_events.extend(out.events.clone());
        rows.extend(out.rows);
        if engine.round() == 20 {
            assert!(engine.scores().row(0).iter().any(|&x| x != 0.0));
            assert_eq!(engine.eta(), 1.0);
        }
        if engine.round() == 21 {
            assert_eq!(engine.eta(), 0.1);
        }
    }
    assert_eq!(
        reset_events,
        vec![LogEvent::Reset {
            round: 21,
            eta: 0.1
        }]
    );
    let at_reset = rows.iter().find(|r| r.round == 21).unwrap();
    assert_eq!(at_reset.sampling_prob, 1.0 / 14.0);
    let before = rows.iter().find(|r| r.round == 20).unwrap();
    assert_ne!(before.sampling_prob, 1.0 / 14.0);
}

/// Sharding items across threads changes nothing observable.
#[test]
fn parallel_mode_matches_serial_exactly() {
    let cfg = small_config(6, 4, 1, 48);
    let resolved = cfg.validate_and_resolve(Path::new(".")).unwrap();
    let mut serial = Engine::new(resolved.clone(), 1).unwrap();
    let mut parallel = Engine::new(resolved, 4).unwrap();
    while !serial.finished() {
        let a = serial.advance_round().unwrap();
        let b = parallel.advance_round().unwrap();
        assert_eq!(a.rows, b.rows);
    }
    for item in 0..6 {
        let sa = serial.scores().row(item);
        let sb = parallel.scores().row(item);
        for (x, y) in sa.iter().zip(sb) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}
