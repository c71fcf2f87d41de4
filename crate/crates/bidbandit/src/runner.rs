//! Run orchestration: wire config, engine, log, snapshot, and reports
//! together; support stopping early and resuming bit-exactly.
//!
//! A resumed run must reproduce the uninterrupted run byte for byte. The
//! snapshot carries learner state and stream positions; the delay queue is
//! rebuilt from the event log's unreleased rows, and reports are recomputed
//! from the full log plus the pure counterfactual replay.

use std::fs;
use std::path::{Path, PathBuf};

use crate::auction::AggregatedOutcome;
use crate::bandit::PlacedBid;
use crate::config::{ExperimentConfig, ResolvedConfig};
use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::metrics::{
    self, audit_information_flow, compute_regret, group_summary, CounterfactualTable,
};
use crate::pipeline::PendingRecord;
use crate::runlog::{EventLog, EventRow, LogWriter};
use crate::snapshot::Snapshot;

pub const EVENT_LOG_FILE: &str = "events.tsv";
pub const SNAPSHOT_FILE: &str = "state.snapshot";
pub const REGRET_REPORT_FILE: &str = "regret_report.txt";
pub const GROUP_SUMMARY_FILE: &str = "group_summary.tsv";

pub fn code_version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub seed_override: Option<u64>,
    /// Worker threads for sharding items; 1 means the plain serial loop.
    pub parallel: usize,
    /// Stop after this round (a snapshot is written either way); reports
    /// are only produced when the horizon is reached.
    pub stop_after: Option<u64>,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: out_dir.into(),
            seed_override: None,
            parallel: 1,
            stop_after: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub out_dir: PathBuf,
    pub event_log: PathBuf,
    pub snapshot: PathBuf,
    pub reports: Vec<PathBuf>,
    pub final_round: u64,
    pub completed: bool,
}

/// Run an experiment from round zero.
pub fn run(cfg: &ExperimentConfig, base_dir: &Path, opts: &RunOptions) -> Result<RunArtifacts> {
    let mut cfg = cfg.clone();
    if let Some(seed) = opts.seed_override {
        cfg.seed = seed;
    }
    let resolved = cfg.validate_and_resolve(base_dir)?;
    fs::create_dir_all(&opts.out_dir)?;

    let mut created: Vec<PathBuf> = Vec::new();
    let result = run_fresh(&resolved, opts, &mut created);
    if result.is_err() {
        for path in created {
            let _ = fs::remove_file(path);
        }
    }
    result
}

fn run_fresh(
    resolved: &ResolvedConfig,
    opts: &RunOptions,
    created: &mut Vec<PathBuf>,
) -> Result<RunArtifacts> {
    let mut engine = Engine::new(resolved.clone(), opts.parallel)?;
    let log_path = opts.out_dir.join(EVENT_LOG_FILE);
    let mut writer = LogWriter::create(&log_path, &resolved.config_hash, code_version())?;
    created.push(log_path.clone());

    let mut rows: Vec<EventRow> = Vec::new();
    let stop = effective_stop(resolved, opts)?;
    drive(&mut engine, &mut writer, &mut rows, stop)?;
    writer.finish()?;

    finalize(engine, resolved, opts, rows, log_path, created)
}

/// Continue a stopped run from its snapshot. The event log written so far
/// must be present in the output directory; the delay queue is rebuilt from
/// its unreleased rows.
pub fn resume(
    snapshot_path: &Path,
    cfg: &ExperimentConfig,
    base_dir: &Path,
    opts: &RunOptions,
) -> Result<RunArtifacts> {
    let mut cfg = cfg.clone();
    if let Some(seed) = opts.seed_override {
        cfg.seed = seed;
    }
    let resolved = cfg.validate_and_resolve(base_dir)?;
    let snap = Snapshot::read_from(snapshot_path)?;
    if snap.config_hash != resolved.config_hash {
        return Err(Error::SnapshotConfigMismatch {
            snapshot: snap.config_hash,
            config: resolved.config_hash,
        });
    }

    let log_path = opts.out_dir.join(EVENT_LOG_FILE);
    if !log_path.exists() {
        return Err(Error::EventLog(format!(
            "resume needs the event log at {}",
            log_path.display()
        )));
    }
    let log = EventLog::read_from(&log_path)?;
    if log.config_hash != resolved.config_hash {
        return Err(Error::EventLog(
            "event log belongs to a different config".into(),
        ));
    }
    if log.last_round() != snap.round {
        return Err(Error::EventLog(format!(
            "event log ends at round {} but snapshot is at round {}",
            log.last_round(),
            snap.round
        )));
    }

    let pending = rebuild_pending(&log.rows, &resolved, snap.round)?;
    let mut engine = Engine::from_snapshot(resolved.clone(), &snap, pending, opts.parallel)?;
    if resolved.eta != snap.config_eta {
        engine.change_eta(resolved.eta)?;
    }

    let original_len = fs::metadata(&log_path)?.len();
    let mut rows = log.rows;
    let stop = effective_stop(&resolved, opts)?;
    let mut writer = LogWriter::append(&log_path)?;
    let drive_result =
        drive(&mut engine, &mut writer, &mut rows, stop).and_then(|_| writer.finish());
    if let Err(e) = drive_result {
        // Roll the log back to its pre-resume length; a failed resume
        // leaves no partial rows behind.
        if let Ok(file) = fs::File::options().write(true).open(&log_path) {
            let _ = file.set_len(original_len);
        }
        return Err(e);
    }

    let mut created: Vec<PathBuf> = Vec::new();
    let result = finalize(
        engine,
        &resolved,
        opts,
        rows,
        log_path.clone(),
        &mut created,
    );
    if result.is_err() {
        for path in created {
            let _ = fs::remove_file(path);
        }
        if let Ok(file) = fs::File::options().write(true).open(&log_path) {
            let _ = file.set_len(original_len);
        }
    }
    result
}

fn effective_stop(resolved: &ResolvedConfig, opts: &RunOptions) -> Result<u64> {
    let horizon = resolved.grid.horizon();
    match opts.stop_after {
        None => Ok(horizon),
        Some(stop) if stop >= 1 && stop <= horizon => Ok(stop),
        Some(stop) => Err(Error::config(
            "stop_after",
            format!("must lie in [1, {horizon}], got {stop}"),
        )),
    }
}

fn drive(
    engine: &mut Engine,
    writer: &mut LogWriter,
    rows: &mut Vec<EventRow>,
    stop: u64,
) -> Result<()> {
    while engine.round() < stop {
        let output = engine.advance_round()?;
        for event in &output.events {
            writer.write_event(*event)?;
        }
        for row in &output.rows {
            writer.write_row(row)?;
            rows.push(*row);
        }
    }
    Ok(())
}

fn finalize(
    engine: Engine,
    resolved: &ResolvedConfig,
    opts: &RunOptions,
    rows: Vec<EventRow>,
    log_path: PathBuf,
    created: &mut Vec<PathBuf>,
) -> Result<RunArtifacts> {
    let snapshot_path = opts.out_dir.join(SNAPSHOT_FILE);
    engine.snapshot().write_to(&snapshot_path)?;
    created.push(snapshot_path.clone());

    let final_round = engine.round();
    let completed = final_round == resolved.grid.horizon();
    let mut reports = Vec::new();
    if completed {
        let log = EventLog::read_from(&log_path)?;
        audit_information_flow(&log, &resolved.grid)?;

        let cf = CounterfactualTable::build(resolved, final_round);
        let regret = compute_regret(&rows, &cf, &resolved.norm, &resolved.grid, &resolved.space)?;
        let regret_path = opts.out_dir.join(REGRET_REPORT_FILE);
        metrics::write_regret_report(&regret_path, &regret)?;
        created.push(regret_path.clone());
        reports.push(regret_path);

        let summary = group_summary(
            &rows,
            resolved.items,
            resolved.grid.batch_count(),
            &resolved.metrics,
        );
        let summary_path = opts.out_dir.join(GROUP_SUMMARY_FILE);
        metrics::write_group_summary(&summary_path, &summary)?;
        created.push(summary_path.clone());
        reports.push(summary_path);

        let mut heatmaps = metrics::export_heatmaps(
            &rows,
            &summary,
            &resolved.space,
            &resolved.grid,
            resolved.items,
            &opts.out_dir,
        )?;
        created.extend(heatmaps.iter().cloned());
        reports.append(&mut heatmaps);
    }

    Ok(RunArtifacts {
        out_dir: opts.out_dir.clone(),
        event_log: log_path,
        snapshot: snapshot_path,
        reports,
        final_round,
        completed,
    })
}

/// Reconstruct the unreleased queue records from logged rows: everything in
/// batches newer than (boundaries done) - delta is still pending.
fn rebuild_pending(
    rows: &[EventRow],
    resolved: &ResolvedConfig,
    snapshot_round: u64,
) -> Result<Vec<PendingRecord>> {
    let boundaries_done = snapshot_round / resolved.grid.q();
    let newest_released = boundaries_done as i64 - resolved.grid.delta() as i64;
    let mut pending = Vec::new();
    for row in rows {
        let batch = resolved.grid.batch_index(row.round)?;
        if batch as i64 <= newest_released {
            continue;
        }
        let bid_index = resolved.space.index_of(row.bid_cents).ok_or_else(|| {
            Error::EventLog(format!(
                "logged bid {} cents is not in the configured bid space",
                row.bid_cents
            ))
        })?;
        pending.push(PendingRecord {
            placed: PlacedBid {
                round: row.round,
                item: row.item,
                bid_index,
                sampling_prob: row.sampling_prob,
            },
            outcome: AggregatedOutcome {
                round: row.round,
                item: row.item,
                bid_cents: row.bid_cents,
                clicks: row.clicks,
                payment_cents: row.payment_cents,
                gain_cents: row.gain_cents,
                contest_size: row.contest_size,
            },
            normalized_reward: None,
        });
    }
    Ok(pending)
}
