//! Policy/score snapshots: versioned plain-text key-value documents.
//!
//! A snapshot captures everything the learner needs to continue a run from
//! a round boundary: bid space, learning rates, round counter, the full
//! score matrix at full precision, and each item's sampling-stream
//! position. A trailing checksum catches corruption or edits. Floats are
//! written in shortest round-trip form, so parsing restores identical bits.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const SNAPSHOT_MAGIC: &str = "bidbandit snapshot v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub config_hash: String,
    /// Last completed round.
    pub round: u64,
    /// Policy snapshot version in force after that round.
    pub snapshot_version: u64,
    /// Learning rate currently in force (may differ from the config's after
    /// a reset).
    pub eta: f64,
    /// Learning rate the original config asked for; lets a resume tell a
    /// mid-run reset apart from an operator-changed config.
    pub config_eta: f64,
    pub bids: Vec<u32>,
    /// One score row per item.
    pub scores: Vec<Vec<f64>>,
    /// Sampling-stream word position per item.
    pub rng_pos: Vec<u128>,
}

impl Snapshot {
    fn body(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{SNAPSHOT_MAGIC}");
        let _ = writeln!(s, "config_hash={}", self.config_hash);
        let _ = writeln!(s, "round={}", self.round);
        let _ = writeln!(s, "snapshot_version={}", self.snapshot_version);
        let _ = writeln!(s, "eta={}", self.eta);
        let _ = writeln!(s, "config_eta={}", self.config_eta);
        let _ = writeln!(s, "items={}", self.scores.len());
        let bids: Vec<String> = self.bids.iter().map(|b| b.to_string()).collect();
        let _ = writeln!(s, "bids={}", bids.join(","));
        for (i, row) in self.scores.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|x| x.to_string()).collect();
            let _ = writeln!(s, "scores[{i}]={}", cells.join(","));
        }
        for (i, pos) in self.rng_pos.iter().enumerate() {
            let _ = writeln!(s, "rng_pos[{i}]={pos}");
        }
        s
    }

    pub fn to_document(&self) -> String {
        let body = self.body();
        let digest = Sha256::digest(body.as_bytes());
        let mut hex = String::with_capacity(64);
        for byte in digest {
            let _ = write!(hex, "{byte:02x}");
        }
        format!("{body}checksum={hex}\n")
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_document())?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Snapshot(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let checksum_at = text
            .rfind("checksum=")
            .ok_or_else(|| Error::Snapshot("missing checksum line".into()))?;
        let (body, checksum_line) = text.split_at(checksum_at);
        let recorded = checksum_line
            .trim_end()
            .strip_prefix("checksum=")
            .ok_or_else(|| Error::Snapshot("malformed checksum line".into()))?;
        let digest = Sha256::digest(body.as_bytes());
        let mut hex = String::with_capacity(64);
        for byte in digest {
            let _ = write!(hex, "{byte:02x}");
        }
        if hex != recorded {
            return Err(Error::SnapshotTampered);
        }

        let mut lines = body.lines();
        match lines.next() {
            Some(SNAPSHOT_MAGIC) => {}
            other => {
                return Err(Error::Snapshot(format!(
                    "unrecognized snapshot header {other:?}"
                )))
            }
        }
        let mut config_hash = None;
        let mut round = None;
        let mut snapshot_version = None;
        let mut eta = None;
        let mut config_eta = None;
        let mut items = None;
        let mut bids: Option<Vec<u32>> = None;
        let mut scores: Vec<(usize, Vec<f64>)> = Vec::new();
        let mut rng_pos: Vec<(usize, u128)> = Vec::new();

        for line in lines {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Snapshot(format!("malformed line: {line}")))?;
            let bad = |what: &str| Error::Snapshot(format!("bad {what}: {line}"));
            match key {
                "config_hash" => config_hash = Some(value.to_string()),
                "round" => round = Some(value.parse().map_err(|_| bad("round"))?),
                "snapshot_version" => {
                    snapshot_version = Some(value.parse().map_err(|_| bad("snapshot_version"))?)
                }
                "eta" => eta = Some(value.parse().map_err(|_| bad("eta"))?),
                "config_eta" => config_eta = Some(value.parse().map_err(|_| bad("config_eta"))?),
                "items" => items = Some(value.parse::<usize>().map_err(|_| bad("items"))?),
                "bids" => {
                    let parsed: std::result::Result<Vec<u32>, _> =
                        value.split(',').map(str::parse).collect();
                    bids = Some(parsed.map_err(|_| bad("bids"))?);
                }
                _ if key.starts_with("scores[") => {
                    let idx: usize = key
                        .trim_start_matches("scores[")
                        .trim_end_matches(']')
                        .parse()
                        .map_err(|_| bad("scores index"))?;
                    let parsed: std::result::Result<Vec<f64>, _> =
                        value.split(',').map(str::parse).collect();
                    scores.push((idx, parsed.map_err(|_| bad("scores"))?));
                }
                _ if key.starts_with("rng_pos[") => {
                    let idx: usize = key
                        .trim_start_matches("rng_pos[")
                        .trim_end_matches(']')
                        .parse()
                        .map_err(|_| bad("rng_pos index"))?;
                    rng_pos.push((idx, value.parse().map_err(|_| bad("rng_pos"))?));
                }
                other => return Err(Error::Snapshot(format!("unknown key `{other}`"))),
            }
        }

        let items = items.ok_or_else(|| Error::Snapshot("missing items".into()))?;
        scores.sort_by_key(|(i, _)| *i);
        rng_pos.sort_by_key(|(i, _)| *i);
        if scores.len() != items || scores.iter().enumerate().any(|(i, (j, _))| i != *j) {
            return Err(Error::Snapshot("score rows do not cover all items".into()));
        }
        if rng_pos.len() != items || rng_pos.iter().enumerate().any(|(i, (j, _))| i != *j) {
            return Err(Error::Snapshot(
                "rng positions do not cover all items".into(),
            ));
        }

        Ok(Snapshot {
            config_hash: config_hash
                .ok_or_else(|| Error::Snapshot("missing config_hash".into()))?,
            round: round.ok_or_else(|| Error::Snapshot("missing round".into()))?,
            snapshot_version: snapshot_version
                .ok_or_else(|| Error::Snapshot("missing snapshot_version".into()))?,
            eta: eta.ok_or_else(|| Error::Snapshot("missing eta".into()))?,
            config_eta: config_eta.ok_or_else(|| Error::Snapshot("missing config_eta".into()))?,
            bids: bids.ok_or_else(|| Error::Snapshot("missing bids".into()))?,
            scores: scores.into_iter().map(|(_, row)| row).collect(),
            rng_pos: rng_pos.into_iter().map(|(_, p)| p).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Snapshot {
        Snapshot {
            config_hash: "cafebabe".into(),
            round: 4000,
            snapshot_version: 501,
            eta: 0.1,
            config_eta: 1.0,
            bids: vec![1, 3, 5],
            scores: vec![
                vec![0.1, -3.25, 7.000000000000001],
                #[allow(clippy::excessive_precision)]
                vec![1e-300, 123456.789012345678, -0.0],
            ],
            rng_pos: vec![128, 4096],
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let snap = sample();
        let doc = snap.to_document();
        let parsed = Snapshot::parse(&doc).unwrap();
        assert_eq!(parsed.round, snap.round);
        assert_eq!(parsed.bids, snap.bids);
        assert_eq!(parsed.rng_pos, snap.rng_pos);
        for (a, b) in parsed
            .scores
            .iter()
            .flatten()
            .zip(snap.scores.iter().flatten())
        {
            assert_eq!(a.to_bits(), b.to_bits(), "score bits must survive");
        }
    }

    #[test]
    fn tampering_is_detected() {
        let doc = sample().to_document();
        let tampered = doc.replace("round=4000", "round=4001");
        assert!(matches!(
            Snapshot::parse(&tampered),
            Err(Error::SnapshotTampered)
        ));
    }

    #[test]
    fn truncated_document_rejected() {
        let doc = sample().to_document();
        let cut = &doc[..doc.len() / 2];
        assert!(Snapshot::parse(cut).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.snapshot");
        let snap = sample();
        snap.write_to(&path).unwrap();
        let restored = Snapshot::read_from(&path).unwrap();
        assert_eq!(restored, snap);
    }
}
