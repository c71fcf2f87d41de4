//! Experiment configuration: a single TOML file describing the bid space,
//! learning rate, batch grid, per-item environments, normalization
//! constants (explicit or fitted from a history file), and the master seed.
//!
//! Configs are validated closed-world before a run starts: every item must
//! end up with an environment and a reward range, and the horizon must tile
//! into whole batches.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::auction::AuctionEnv;
use crate::bandit::BidSpace;
use crate::error::{Error, Result};
use crate::normalize::{fit_alphas, fit_quantiles, NormalizationConfig, RewardRange};
use crate::pipeline::BatchGrid;

/// Learning-rate specification: an explicit value, or the named
/// `"horizon-rate"` preset sqrt(log |B| / (T |B|)).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EtaSpec {
    Value(f64),
    Named(String),
}

impl EtaSpec {
    pub fn resolve(&self, horizon: u64, num_bids: usize) -> Result<f64> {
        match self {
            EtaSpec::Value(v) => {
                if !v.is_finite() || *v <= 0.0 {
                    return Err(Error::InvalidEta(*v));
                }
                Ok(*v)
            }
            EtaSpec::Named(name) if name == "horizon-rate" => {
                let b = num_bids as f64;
                Ok((b.ln() / (horizon as f64 * b)).sqrt())
            }
            EtaSpec::Named(other) => Err(Error::config(
                "learning.eta",
                format!("unknown preset `{other}` (expected \"horizon-rate\" or a number)"),
            )),
        }
    }
}

/// Mid-run reinitialization: at the start of `round`, zero all scores and
/// switch to the new learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResetSpec {
    pub round: u64,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningConfig {
    pub eta: EtaSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reset: Option<ResetSpec>,
}

/// Where the normalization constants come from. Alphas: explicit or fitted
/// from a traffic history file. Ranges: one shared range, per-item ranges,
/// or fitted from a profit history file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct NormalizationSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alphas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traffic_history: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub minimax: Option<RewardRange>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub minimax_per_item: Option<Vec<RewardRange>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profit_history: Option<PathBuf>,
}

/// Thresholds for the product-group split in reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// Items averaging fewer clicks per day than this are "low traffic".
    pub low_traffic_daily_clicks: f64,
    /// Gain-to-cost ratio at or above which a high-traffic item counts as
    /// profitable.
    pub profitable_gain_cost_ratio: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            low_traffic_daily_clicks: 10.0,
            profitable_gain_cost_ratio: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Number of items steered independently (n).
    pub items: usize,
    /// Rounds per batch (q); one batch is one feedback day.
    pub rounds_per_batch: u64,
    /// Feedback delay in whole batches.
    pub delay_batches: u64,
    /// Total rounds (T); must be a multiple of `rounds_per_batch`.
    pub horizon: u64,
    /// Bid grid in cents; defaults to the built-in 14-bid grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bid_space: Option<Vec<u32>>,
    pub learning: LearningConfig,
    /// Environment shared by every item ...
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub environment: Option<AuctionEnv>,
    /// ... or one environment per item (exactly `items` entries).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub environments: Option<Vec<AuctionEnv>>,
    pub normalization: NormalizationSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub metrics: MetricsConfig,
}

/// Validated runtime view of a config, with every constant resolved.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub seed: u64,
    pub items: usize,
    pub grid: BatchGrid,
    pub space: BidSpace,
    pub eta: f64,
    pub reset: Option<ResetSpec>,
    pub envs: Vec<AuctionEnv>,
    pub norm: NormalizationConfig,
    pub metrics: MetricsConfig,
    /// Hash of everything that defines the trajectory, except the learning
    /// rate (adjustable on resume) and the output directory.
    pub config_hash: String,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::config("<config>", e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            Error::config("<config>", format!("cannot read {}: {e}", path.display()))
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config("<config>", e.to_string()))
    }

    /// Validate everything and resolve fitted constants. `base_dir` anchors
    /// relative history-file paths (usually the config file's directory).
    pub fn validate_and_resolve(&self, base_dir: &Path) -> Result<ResolvedConfig> {
        if self.items == 0 {
            return Err(Error::config("items", "need at least one item"));
        }
        let grid = BatchGrid::new(self.rounds_per_batch, self.delay_batches, self.horizon)?;
        let space = match &self.bid_space {
            Some(bids) => BidSpace::new(bids.clone())?,
            None => BidSpace::default(),
        };
        let eta = self.learning.eta.resolve(self.horizon, space.len())?;
        if let Some(reset) = &self.learning.reset {
            if reset.round < 1 || reset.round > self.horizon {
                return Err(Error::config(
                    "learning.reset.round",
                    format!("must lie in [1, {}], got {}", self.horizon, reset.round),
                ));
            }
            if !reset.eta.is_finite() || reset.eta <= 0.0 {
                return Err(Error::config("learning.reset.eta", "must be positive"));
            }
        }

        let envs: Vec<AuctionEnv> = match (&self.environment, &self.environments) {
            (Some(shared), None) => vec![shared.clone(); self.items],
            (None, Some(list)) => {
                if list.len() != self.items {
                    return Err(Error::config(
                        "environments",
                        format!("need exactly {} entries, got {}", self.items, list.len()),
                    ));
                }
                list.clone()
            }
            (Some(_), Some(_)) => {
                return Err(Error::config(
                    "environment",
                    "give either `environment` or `environments`, not both",
                ))
            }
            (None, None) => {
                return Err(Error::config(
                    "environment",
                    "missing: every item needs an auction environment",
                ))
            }
        };
        for (i, env) in envs.iter().enumerate() {
            env.validate(self.rounds_per_batch).map_err(|e| match e {
                Error::Config { field, message } => {
                    Error::config(format!("{field} (item {i})"), message)
                }
                other => other,
            })?;
        }

        let norm = self.resolve_normalization(base_dir)?;

        if self.metrics.low_traffic_daily_clicks.is_nan() || self.metrics.low_traffic_daily_clicks < 0.0 {
            return Err(Error::config(
                "metrics.low_traffic_daily_clicks",
                "must be nonnegative",
            ));
        }
        if self.metrics.profitable_gain_cost_ratio.is_nan() || self.metrics.profitable_gain_cost_ratio < 0.0 {
            return Err(Error::config(
                "metrics.profitable_gain_cost_ratio",
                "must be nonnegative",
            ));
        }

        let config_hash = hash_resolved(self, &space, &envs, &norm);
        Ok(ResolvedConfig {
            seed: self.seed,
            items: self.items,
            grid,
            space,
            eta,
            reset: self.learning.reset,
            envs,
            norm,
            metrics: self.metrics,
            config_hash,
        })
    }

    fn resolve_normalization(&self, base_dir: &Path) -> Result<NormalizationConfig> {
        let q = self.rounds_per_batch as usize;
        let section = &self.normalization;

        let alphas = match (&section.alphas, &section.traffic_history) {
            (Some(a), None) => a.clone(),
            (None, Some(path)) => {
                let rows = read_history(&resolve_path(base_dir, path))?;
                let mut per_period: Vec<Vec<f64>> = vec![Vec::new(); q];
                for (_, period, value) in rows {
                    if period < 1 || period > q as u64 {
                        return Err(Error::config(
                            "normalization.traffic_history",
                            format!("period {period} outside [1, {q}]"),
                        ));
                    }
                    per_period[(period - 1) as usize].push(value);
                }
                fit_alphas(&per_period)?
            }
            (Some(_), Some(_)) => {
                return Err(Error::config(
                    "normalization",
                    "give either `alphas` or `traffic_history`, not both",
                ))
            }
            (None, None) => {
                return Err(Error::config(
                    "normalization",
                    "missing alphas: give `alphas` or `traffic_history`",
                ))
            }
        };
        if alphas.len() != q {
            return Err(Error::config(
                "normalization.alphas",
                format!("need exactly q = {q} entries, got {}", alphas.len()),
            ));
        }

        let sources = [
            section.minimax.is_some(),
            section.minimax_per_item.is_some(),
            section.profit_history.is_some(),
        ];
        if sources.iter().filter(|x| **x).count() != 1 {
            return Err(Error::config(
                "normalization",
                "give exactly one of `minimax`, `minimax_per_item`, `profit_history`",
            ));
        }
        let ranges: Vec<RewardRange> = if let Some(shared) = section.minimax {
            vec![RewardRange::new(shared.r_min, shared.r_max)?; self.items]
        } else if let Some(list) = &section.minimax_per_item {
            if list.len() != self.items {
                return Err(Error::config(
                    "normalization.minimax_per_item",
                    format!("need exactly {} entries, got {}", self.items, list.len()),
                ));
            }
            list.iter()
                .map(|r| RewardRange::new(r.r_min, r.r_max))
                .collect::<Result<_>>()?
        } else {
            let path = section.profit_history.as_ref().expect("checked above");
            let rows = read_history(&resolve_path(base_dir, path))?;
            let mut per_item: Vec<Vec<f64>> = vec![Vec::new(); self.items];
            for (item, _, value) in rows {
                if item >= self.items {
                    return Err(Error::config(
                        "normalization.profit_history",
                        format!("item {item} outside [0, {})", self.items),
                    ));
                }
                per_item[item].push(value);
            }
            per_item
                .iter()
                .map(|history| fit_quantiles(history))
                .collect::<Result<_>>()?
        };

        NormalizationConfig::new(alphas, ranges)
    }
}

fn resolve_path(base_dir: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base_dir.join(path)
    }
}

/// Plain tabular history file: a `item<TAB>period<TAB>value` header followed
/// by one observation per line.
pub fn read_history(path: &Path) -> Result<Vec<(usize, u64, f64)>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::config("history", format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    match lines.next() {
        Some("item\tperiod\tvalue") => {}
        other => {
            return Err(Error::config(
                "history",
                format!(
                    "expected header `item\\tperiod\\tvalue`, got {:?} in {}",
                    other.unwrap_or(""),
                    path.display()
                ),
            ))
        }
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::config(
                "history",
                format!("line {}: expected 3 columns", lineno + 2),
            ));
        }
        let item = fields[0]
            .parse()
            .map_err(|_| Error::config("history", format!("line {}: bad item", lineno + 2)))?;
        let period = fields[1]
            .parse()
            .map_err(|_| Error::config("history", format!("line {}: bad period", lineno + 2)))?;
        let value = fields[2]
            .parse()
            .map_err(|_| Error::config("history", format!("line {}: bad value", lineno + 2)))?;
        rows.push((item, period, value));
    }
    Ok(rows)
}

/// Canonical digest of the trajectory-defining parts of a config. The
/// learning rate is deliberately left out so a resumed run may adjust it;
/// so is the output directory, which is a location rather than semantics.
fn hash_resolved(
    cfg: &ExperimentConfig,
    space: &BidSpace,
    envs: &[AuctionEnv],
    norm: &NormalizationConfig,
) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "seed={}", cfg.seed);
    let _ = writeln!(s, "items={}", cfg.items);
    let _ = writeln!(s, "q={}", cfg.rounds_per_batch);
    let _ = writeln!(s, "delta={}", cfg.delay_batches);
    let _ = writeln!(s, "horizon={}", cfg.horizon);
    let _ = writeln!(s, "bids={:?}", space.bids());
    if let Some(reset) = &cfg.learning.reset {
        let _ = writeln!(s, "reset={}@{}", reset.eta, reset.round);
    }
    for (i, env) in envs.iter().enumerate() {
        let _ = writeln!(
            s,
            "env[{i}]={}",
            toml::to_string(env).expect("environment serializes")
        );
    }
    let _ = writeln!(s, "alphas={:?}", norm.alphas());
    for (i, r) in norm.ranges().iter().enumerate() {
        let _ = writeln!(s, "range[{i}]={},{}", r.r_min, r.r_max);
    }
    let _ = writeln!(
        s,
        "metrics={},{}",
        cfg.metrics.low_traffic_daily_clicks, cfg.metrics.profitable_gain_cost_ratio
    );
    let digest = Sha256::digest(s.as_bytes());
    let mut hex = String::with_capacity(64);
    for byte in digest {
        let _ = write!(hex, "{byte:02x}");
    }
    hex
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const MINIMAL_TOML: &str = r#"
seed = 42
items = 1
rounds_per_batch = 4
delay_batches = 0
horizon = 4

[learning]
eta = 0.1

[environment]
[environment.mechanism]
kind = "second_price"
click_prob = 1.0
[environment.mechanism.competitor]
kind = "fixed"
cents = 5
[environment.valuation]
conversion_prob = 1.0
[environment.valuation.value]
kind = "fixed"
cents = 20
[environment.traffic]
period_factors = [1.0, 1.0, 1.0, 1.0]
[environment.traffic.arrivals]
kind = "poisson"
rate = 10.0

[normalization]
alphas = [1.0, 1.0, 1.0, 1.0]
[normalization.minimax]
r_min = -50.0
r_max = 150.0
"#;

    #[test]
    fn minimal_config_parses_and_resolves() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL_TOML).unwrap();
        let resolved = cfg.validate_and_resolve(Path::new(".")).unwrap();
        assert_eq!(resolved.items, 1);
        assert_eq!(resolved.space.len(), 14, "default bid grid");
        assert_eq!(resolved.eta, 0.1);
        assert_eq!(resolved.grid.batch_count(), 1);
    }

    #[test]
    fn serialization_round_trip_is_idempotent() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL_TOML).unwrap();
        let once = cfg.to_toml_string().unwrap();
        let reparsed = ExperimentConfig::from_toml_str(&once).unwrap();
        assert_eq!(reparsed, cfg);
        let twice = reparsed.to_toml_string().unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn horizon_must_tile_into_batches() {
        let bad = MINIMAL_TOML.replace("horizon = 4", "horizon = 6");
        let cfg = ExperimentConfig::from_toml_str(&bad).unwrap();
        let err = cfg.validate_and_resolve(Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("horizon"), "{err}");
    }

    #[test]
    fn theorem_rate_eta_resolves() {
        let toml = MINIMAL_TOML.replace("eta = 0.1", "eta = \"horizon-rate\"");
        let cfg = ExperimentConfig::from_toml_str(&toml).unwrap();
        let resolved = cfg.validate_and_resolve(Path::new(".")).unwrap();
        let expected = (14f64.ln() / (4.0 * 14.0)).sqrt();
        assert_eq!(resolved.eta, expected);
    }

    #[test]
    fn unknown_eta_preset_rejected() {
        let toml = MINIMAL_TOML.replace("eta = 0.1", "eta = \"warp-speed\"");
        let cfg = ExperimentConfig::from_toml_str(&toml).unwrap();
        assert!(cfg.validate_and_resolve(Path::new(".")).is_err());
    }

    #[test]
    fn hash_ignores_eta_but_not_seed() {
        let a = ExperimentConfig::from_toml_str(MINIMAL_TOML).unwrap();
        let b = ExperimentConfig::from_toml_str(&MINIMAL_TOML.replace("eta = 0.1", "eta = 0.7"))
            .unwrap();
        let c = ExperimentConfig::from_toml_str(&MINIMAL_TOML.replace("seed = 42", "seed = 43"))
            .unwrap();
        let dot = Path::new(".");
        let ha = a.validate_and_resolve(dot).unwrap().config_hash;
        let hb = b.validate_and_resolve(dot).unwrap().config_hash;
        let hc = c.validate_and_resolve(dot).unwrap().config_hash;
        assert_eq!(ha, hb, "learning rate must not change the hash");
        assert_ne!(ha, hc, "seed must change the hash");
    }

    #[test]
    fn normalization_fit_from_history_files() {
        let dir = tempfile::tempdir().unwrap();
        let profit_path = dir.path().join("profits.tsv");
        let mut profit = String::from("item\tperiod\tvalue\n");
        for v in 0..=100 {
            profit.push_str(&format!("0\t1\t{v}\n"));
        }
        fs::write(&profit_path, profit).unwrap();

        let traffic_path = dir.path().join("traffic.tsv");
        let mut traffic = String::from("item\tperiod\tvalue\n");
        for period in 1..=4u64 {
            let volume = 100.0 / period as f64;
            traffic.push_str(&format!("0\t{period}\t{volume}\n"));
            traffic.push_str(&format!("0\t{period}\t{volume}\n"));
        }
        fs::write(&traffic_path, traffic).unwrap();

        let toml = MINIMAL_TOML
            .replace(
                "alphas = [1.0, 1.0, 1.0, 1.0]",
                "traffic_history = \"traffic.tsv\"",
            )
            .replace(
                "[normalization.minimax]\nr_min = -50.0\nr_max = 150.0",
                "profit_history = \"profits.tsv\"",
            );
        let cfg = ExperimentConfig::from_toml_str(&toml).unwrap();
        let resolved = cfg.validate_and_resolve(dir.path()).unwrap();
        assert_eq!(resolved.norm.alphas()[0], 1.0);
        assert!((resolved.norm.alphas()[1] - 0.5).abs() < 1e-12);
        let r = resolved.norm.range(0);
        assert!((r.r_min - 5.0).abs() < 1e-9);
        assert!((r.r_max - 95.0).abs() < 1e-9);
    }

    #[test]
    fn missing_environment_is_field_precise() {
        let toml = MINIMAL_TOML
            .split("[environment]")
            .next()
            .unwrap()
            .to_string()
            + "\n[normalization]\nalphas = [1.0, 1.0, 1.0, 1.0]\n[normalization.minimax]\nr_min = -1.0\nr_max = 1.0\n";
        let cfg = ExperimentConfig::from_toml_str(&toml).unwrap();
        let err = cfg.validate_and_resolve(Path::new(".")).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "environment"));
    }
}
