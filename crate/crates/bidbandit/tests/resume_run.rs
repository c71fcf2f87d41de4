//! Snapshot / resume contracts beyond the byte-equality acceptance check.

use std::fs;
use std::path::Path;

use bidbandit::config::EtaSpec;
use bidbandit::error::Error;
use bidbandit::presets::bench_regret_config;
use bidbandit::runlog::LogEvent;
use bidbandit::runner::{self, RunOptions, EVENT_LOG_FILE, SNAPSHOT_FILE};
use bidbandit::EventLog;

fn quick_config() -> bidbandit::ExperimentConfig {
    let mut cfg = bench_regret_config(2024);
    cfg.horizon = 96;
    cfg.learning.eta = EtaSpec::Value(0.3);
    cfg
}

#[test]
fn tampered_snapshot_is_rejected() {
    let cfg = quick_config();
    let dir = tempfile::tempdir().unwrap();
    let stopped = runner::run(
        &cfg,
        Path::new("."),
        &RunOptions {
            stop_after: Some(48),
            ..RunOptions::new(dir.path())
        },
    )
    .unwrap();
    let text = fs::read_to_string(&stopped.snapshot).unwrap();
    fs::write(&stopped.snapshot, text.replace("round=48", "round=40")).unwrap();
    let err = runner::resume(
        &stopped.snapshot,
        &cfg,
        Path::new("."),
        &RunOptions::new(dir.path()),
    )
    .unwrap_err();
    assert!(matches!(err, Error::SnapshotTampered), "{err}");
}

#[test]
fn config_mismatch_is_rejected() {
    let cfg = quick_config();
    let dir = tempfile::tempdir().unwrap();
    let stopped = runner::run(
        &cfg,
        Path::new("."),
        &RunOptions {
            stop_after: Some(48),
            ..RunOptions::new(dir.path())
        },
    )
    .unwrap();
    let mut other = cfg.clone();
    other.seed = 9999;
    let err = runner::resume(
        &stopped.snapshot,
        &other,
        Path::new("."),
        &RunOptions::new(dir.path()),
    )
    .unwrap_err();
    assert!(matches!(err, Error::SnapshotConfigMismatch { .. }), "{err}");
}

#[test]
fn resume_without_the_event_log_is_rejected() {
    let cfg = quick_config();
    let dir = tempfile::tempdir().unwrap();
    let stopped = runner::run(
        &cfg,
        Path::new("."),
        &RunOptions {
            stop_after: Some(48),
            ..RunOptions::new(dir.path())
        },
    )
    .unwrap();
    fs::remove_file(dir.path().join(EVENT_LOG_FILE)).unwrap();
    let err = runner::resume(
        &stopped.snapshot,
        &cfg,
        Path::new("."),
        &RunOptions::new(dir.path()),
    )
    .unwrap_err();
    assert!(matches!(err, Error::EventLog(_)), "{err}");
}

/// A changed learning rate is an allowed operator adjustment: the resume
/// proceeds and records an eta-change event at the first resumed round.
#[test]
fn changed_eta_is_allowed_and_logged() {
    let cfg = quick_config();
    let dir = tempfile::tempdir().unwrap();
    let stopped = runner::run(
        &cfg,
        Path::new("."),
        &RunOptions {
            stop_after: Some(48),
            ..RunOptions::new(dir.path())
        },
    )
    .unwrap();
    let mut adjusted = cfg.clone();
    adjusted.learning.eta = EtaSpec::Value(0.05);
    let resumed = runner::resume(
        &stopped.snapshot,
        &adjusted,
        Path::new("."),
        &RunOptions::new(dir.path()),
    )
    .unwrap();
    assert!(resumed.completed);
    let log = EventLog::read_from(&dir.path().join(EVENT_LOG_FILE)).unwrap();
    assert!(
        log.events.contains(&LogEvent::EtaChange {
            round: 49,
            eta: 0.05
        }),
        "events: {:?}",
        log.events
    );
}

/// Stopping mid-batch still resumes bit-exactly: the queue rebuild covers
/// partially executed batches too.
#[test]
fn resume_from_a_mid_batch_stop_matches_straight_run() {
    let cfg = quick_config();
    let dir_straight = tempfile::tempdir().unwrap();
    let dir_resumed = tempfile::tempdir().unwrap();
    runner::run(&cfg, Path::new("."), &RunOptions::new(dir_straight.path())).unwrap();
    let stopped = runner::run(
        &cfg,
        Path::new("."),
        &RunOptions {
            stop_after: Some(37),
            ..RunOptions::new(dir_resumed.path())
        },
    )
    .unwrap();
    runner::resume(
        &stopped.snapshot,
        &cfg,
        Path::new("."),
        &RunOptions::new(dir_resumed.path()),
    )
    .unwrap();
    for name in [EVENT_LOG_FILE, SNAPSHOT_FILE] {
        assert_eq!(
            fs::read(dir_straight.path().join(name)).unwrap(),
            fs::read(dir_resumed.path().join(name)).unwrap(),
            "{name} differs"
        );
    }
}

/// Smallest possible run: one item, one batch, no delay. Everything gets
/// written.
#[test]
fn minimal_single_batch_run_produces_all_artifacts() {
    let mut cfg = quick_config();
    cfg.horizon = cfg.rounds_per_batch;
    cfg.delay_batches = 0;
    let dir = tempfile::tempdir().unwrap();
    let artifacts = runner::run(&cfg, Path::new("."), &RunOptions::new(dir.path())).unwrap();
    assert!(artifacts.completed);
    assert!(artifacts.event_log.exists());
    assert!(artifacts.snapshot.exists());
    assert!(artifacts.reports.iter().all(|p| p.exists()));
    assert!(artifacts
        .reports
        .iter()
        .any(|p| p.ends_with("regret_report.txt")));
}

/// A configured reset lands in the log as an event line.
#[test]
fn reset_event_is_logged() {
    let mut cfg = quick_config();
    cfg.learning.reset = Some(bidbandit::config::ResetSpec {
        round: 33,
        eta: 0.05,
    });
    let dir = tempfile::tempdir().unwrap();
    runner::run(&cfg, Path::new("."), &RunOptions::new(dir.path())).unwrap();
    let log = EventLog::read_from(&dir.path().join(EVENT_LOG_FILE)).unwrap();
    assert_eq!(
        log.events,
        vec![LogEvent::Reset {
            round: 33,
            eta: 0.05
        }]
    );
}

/// Stopping exactly at the horizon is just a complete run; stop_after
/// beyond the horizon is a validation error.
#[test]
fn stop_bounds_are_validated() {
    let cfg = quick_config();
    let dir = tempfile::tempdir().unwrap();
    let err = runner::run(
        &cfg,
        Path::new("."),
        &RunOptions {
            stop_after: Some(cfg.horizon + 1),
            ..RunOptions::new(dir.path())
        },
    )
    .unwrap_err();
    assert!(matches!(err, Error::Config { .. }), "{err}");
    assert!(
        !dir.path().join(EVENT_LOG_FILE).exists(),
        "failed run must not leave partial outputs"
    );
}
