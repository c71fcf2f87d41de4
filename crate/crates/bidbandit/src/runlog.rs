//! Append-only event log.
//!
//! One row per (round, item), strictly ordered, preceded by a metadata
//! header. Floats are written in Rust's shortest round-trip form, so a
//! parsed log reproduces the original values bit for bit — resuming a run
//! rebuilds the delay queue from these rows.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const LOG_MAGIC: &str = "# bidbandit event log v1";
pub const COLUMNS: &str =
    "round\tperiod\titem\tbid\tsampling_prob\tcontest_size\tclicks\tpayment\tgain\tsnapshot_version\trelease_batch";

/// One sampled bid with its contest outcome. `release_batch` is nonzero only
/// on rows of a boundary round where that boundary released a batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventRow {
    pub round: u64,
    pub period: u64,
    pub item: usize,
    pub bid_cents: u32,
    pub sampling_prob: f64,
    pub contest_size: u64,
    pub clicks: u64,
    pub payment_cents: u64,
    pub gain_cents: u64,
    pub snapshot_version: u64,
    pub release_batch: u64,
}

/// Out-of-band happenings, interleaved ahead of their round's rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LogEvent {
    Reset { round: u64, eta: f64 },
    EtaChange { round: u64, eta: f64 },
}

impl LogEvent {
    pub fn round(&self) -> u64 {
        match self {
            LogEvent::Reset { round, .. } | LogEvent::EtaChange { round, .. } => *round,
        }
    }

    fn to_line(self) -> String {
        match self {
            LogEvent::Reset { round, eta } => format!("# event: reset round={round} eta={eta}"),
            LogEvent::EtaChange { round, eta } => {
                format!("# event: eta-change round={round} eta={eta}")
            }
        }
    }

    fn parse(line: &str) -> Result<Self> {
        let rest = line
            .strip_prefix("# event: ")
            .ok_or_else(|| Error::EventLog(format!("malformed event line: {line}")))?;
        let mut parts = rest.split(' ');
        let kind = parts
            .next()
            .ok_or_else(|| Error::EventLog("empty event line".into()))?;
        let mut round = None;
        let mut eta = None;
        for kv in parts {
            match kv.split_once('=') {
                Some(("round", v)) => round = v.parse().ok(),
                Some(("eta", v)) => eta = v.parse().ok(),
                _ => {}
            }
        }
        let (round, eta) = match (round, eta) {
            (Some(r), Some(e)) => (r, e),
            _ => return Err(Error::EventLog(format!("malformed event line: {line}"))),
        };
        match kind {
            "reset" => Ok(LogEvent::Reset { round, eta }),
            "eta-change" => Ok(LogEvent::EtaChange { round, eta }),
            other => Err(Error::EventLog(format!("unknown event kind `{other}`"))),
        }
    }
}

impl EventRow {
    pub fn to_line(&self) -> String {
        let mut s = String::new();
        write!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.round,
            self.period,
            self.item,
            self.bid_cents,
            self.sampling_prob,
            self.contest_size,
            self.clicks,
            self.payment_cents,
            self.gain_cents,
            self.snapshot_version,
            self.release_batch
        )
        .expect("writing to String cannot fail");
        s
    }

    pub fn parse(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 11 {
            return Err(Error::EventLog(format!(
                "expected 11 columns, got {}: {line}",
                fields.len()
            )));
        }
        let bad = |col: &str| Error::EventLog(format!("bad `{col}` in row: {line}"));
        Ok(EventRow {
            round: fields[0].parse().map_err(|_| bad("round"))?,
            period: fields[1].parse().map_err(|_| bad("period"))?,
            item: fields[2].parse().map_err(|_| bad("item"))?,
            bid_cents: fields[3].parse().map_err(|_| bad("bid"))?,
            sampling_prob: fields[4].parse().map_err(|_| bad("sampling_prob"))?,
            contest_size: fields[5].parse().map_err(|_| bad("contest_size"))?,
            clicks: fields[6].parse().map_err(|_| bad("clicks"))?,
            payment_cents: fields[7].parse().map_err(|_| bad("payment"))?,
            gain_cents: fields[8].parse().map_err(|_| bad("gain"))?,
            snapshot_version: fields[9].parse().map_err(|_| bad("snapshot_version"))?,
            release_batch: fields[10].parse().map_err(|_| bad("release_batch"))?,
        })
    }

    pub fn profit_cents(&self) -> i64 {
        self.gain_cents as i64 - self.payment_cents as i64
    }
}

/// Fully parsed event log.
#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    pub config_hash: String,
    pub code_version: String,
    pub rows: Vec<EventRow>,
    pub events: Vec<LogEvent>,
}

impl EventLog {
    pub fn read_from(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        let reader = BufReader::new(file);
        let mut lines = reader.lines();
        let magic = lines
            .next()
            .ok_or_else(|| Error::EventLog("empty log file".into()))??;
        if magic != LOG_MAGIC {
            return Err(Error::EventLog(format!("unrecognized header: {magic}")));
        }
        let mut config_hash = String::new();
        let mut code_version = String::new();
        let mut rows = Vec::new();
        let mut events = Vec::new();
        for line in lines {
            let line = line?;
            if let Some(v) = line.strip_prefix("# config_hash=") {
                config_hash = v.to_string();
            } else if let Some(v) = line.strip_prefix("# code_version=") {
                code_version = v.to_string();
            } else if line.starts_with("# event: ") {
                events.push(LogEvent::parse(&line)?);
            } else if line.starts_with('#') || line == COLUMNS || line.is_empty() {
                continue;
            } else {
                rows.push(EventRow::parse(&line)?);
            }
        }
        let log = EventLog {
            config_hash,
            code_version,
            rows,
            events,
        };
        log.check_ordering()?;
        Ok(log)
    }

    fn check_ordering(&self) -> Result<()> {
        for w in self.rows.windows(2) {
            if (w[1].round, w[1].item) <= (w[0].round, w[0].item) {
                return Err(Error::EventLog(format!(
                    "rows out of order at round {} item {}",
                    w[1].round, w[1].item
                )));
            }
        }
        Ok(())
    }

    pub fn last_round(&self) -> u64 {
        self.rows.last().map(|r| r.round).unwrap_or(0)
    }
}

/// Streaming writer used during a run. Header goes out on creation; rows and
/// events append in execution order.
pub struct LogWriter {
    out: BufWriter<File>,
}

impl LogWriter {
    pub fn create(path: &Path, config_hash: &str, code_version: &str) -> Result<Self> {
        let file = File::create(path)?;
        let mut out = BufWriter::new(file);
        writeln!(out, "{LOG_MAGIC}")?;
        writeln!(out, "# config_hash={config_hash}")?;
        writeln!(out, "# code_version={code_version}")?;
        writeln!(out, "{COLUMNS}")?;
        Ok(Self { out })
    }

    /// Reopen an existing log for appending (resume path).
    pub fn append(path: &Path) -> Result<Self> {
        let file = File::options().append(true).open(path)?;
        Ok(Self {
            out: BufWriter::new(file),
        })
    }

    pub fn write_event(&mut self, event: LogEvent) -> Result<()> {
        writeln!(self.out, "{}", event.to_line())?;
        Ok(())
    }

    pub fn write_row(&mut self, row: &EventRow) -> Result<()> {
        writeln!(self.out, "{}", row.to_line())?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn sample_row(round: u64, item: usize) -> EventRow {
        EventRow {
            round,
            period: (round - 1) % 8 + 1,
            item,
            bid_cents: 25,
            sampling_prob: 1.0 / 14.0,
            contest_size: 97,
            clicks: 31,
            payment_cents: 620,
            gain_cents: 744,
            snapshot_version: 3,
            release_batch: 0,
        }
    }

    #[test]
    fn rows_round_trip_exactly() {
        let row = EventRow {
            #[allow(clippy::excessive_precision)]
            sampling_prob: 0.123456789012345678,
            ..sample_row(17, 2)
        };
        let parsed = EventRow::parse(&row.to_line()).unwrap();
        assert_eq!(parsed, row);
        assert_eq!(
            parsed.sampling_prob.to_bits(),
            row.sampling_prob.to_bits(),
            "float round-trip must be lossless"
        );
    }

    #[test]
    fn write_then_read_preserves_everything() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("events.tsv");
        let mut w = LogWriter::create(&path, "deadbeef", "0.1.0").unwrap();
        w.write_event(LogEvent::Reset { round: 1, eta: 0.1 })
            .unwrap();
        for round in 1..=3 {
            for item in 0..2 {
                w.write_row(&sample_row(round, item)).unwrap();
            }
        }
        w.finish().unwrap();

        let log = EventLog::read_from(&path).unwrap();
        assert_eq!(log.config_hash, "deadbeef");
        assert_eq!(log.code_version, "0.1.0");
        assert_eq!(log.rows.len(), 6);
        assert_eq!(log.events, vec![LogEvent::Reset { round: 1, eta: 0.1 }]);
        assert_eq!(log.last_round(), 3);
    }

    #[test]
    fn out_of_order_rows_rejected_on_read() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("events.tsv");
        let mut w = LogWriter::create(&path, "x", "y").unwrap();
        w.write_row(&sample_row(2, 0)).unwrap();
        w.write_row(&sample_row(1, 0)).unwrap();
        w.finish().unwrap();
        assert!(EventLog::read_from(&path).is_err());
    }
}
