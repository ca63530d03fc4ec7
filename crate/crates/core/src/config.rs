//! Experiment configuration: flat `key = value` files plus overrides.
//!
//! ```text
//! # comments and blank lines are ignored
//! mode = all                 # og | oemvcc | ea | all | comma list
//! conflict_rates = 0.2, 0.5, 0.8
//! seeds = 1, 2, 3, 4, 5
//! cache_capacity = unbounded
//! ```

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netsim::CostModel;
use crate::sim::SimConfig;
use crate::workload::{Interarrival, WorkloadConfig};
use crate::Mode;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.to_string(), message: message.into() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub modes: Vec<Mode>,
    pub conflict_rates: Vec<f64>,
    pub seeds: Vec<u64>,
    pub clients: u32,
    pub peers: u32,
    pub orderers: u32,
    pub gateways: u32,
    pub block_size: usize,
    pub block_interval_ms: f64,
    pub cache_capacity: Option<usize>,
    pub crash_at_ms: Option<f64>,
    pub election_timeout_ms: f64,
    pub hot_assets: u32,
    pub cold_assets_per_client: u32,
    pub tx_per_client: u32,
    pub interarrival_ms: f64,
    pub interarrival: Interarrival,
    pub malicious_fraction: f64,
    pub max_retries: u32,
    pub endorsements_required: usize,
    pub endorse_timeout_ms: f64,
    pub warmup_fraction: f64,
    pub cost: CostModel,
    pub oracle: bool,
    pub trace: bool,
    pub retry: bool,
    pub bump_write_set: bool,
    pub skip_peer_mvcc: bool,
    /// Write each run's reference-peer ledger as JSON lines.
    pub dump_ledger: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let sim = SimConfig::default();
        let w = WorkloadConfig::default();
        ExperimentConfig {
            modes: Mode::ALL.to_vec(),
            conflict_rates: vec![0.2, 0.5, 0.8],
            seeds: (1..=5).collect(),
            clients: w.clients,
            peers: sim.peers,
            orderers: sim.orderers,
            gateways: sim.gateways,
            block_size: sim.block_size,
            block_interval_ms: sim.block_interval_ms,
            cache_capacity: sim.cache_capacity,
            crash_at_ms: None,
            election_timeout_ms: sim.election_timeout_ms,
            hot_assets: w.hot_assets,
            cold_assets_per_client: w.cold_assets_per_client,
            tx_per_client: w.tx_per_client,
            interarrival_ms: w.interarrival_ms,
            interarrival: w.interarrival,
            malicious_fraction: w.malicious_fraction,
            max_retries: w.max_retries,
            endorsements_required: sim.endorsements_required,
            endorse_timeout_ms: sim.endorse_timeout_ms,
            warmup_fraction: 0.1,
            cost: CostModel::default(),
            oracle: false,
            trace: false,
            retry: false,
            bump_write_set: false,
            skip_peer_mvcc: false,
            dump_ledger: false,
        }
    }
}

fn num<T: std::str::FromStr>(field: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    v.parse::<T>().map_err(|e| invalid(field, format!("cannot parse {v:?}: {e}")))
}

fn list<T: std::str::FromStr>(field: &str, v: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: fmt::Display,
{
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| num(field, s)).collect()
}

fn flag(field: &str, v: &str) -> Result<bool, ConfigError> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(invalid(field, format!("expected true or false, got {v:?}"))),
    }
}

fn optional<T: std::str::FromStr>(field: &str, v: &str, none: &[&str]) -> Result<Option<T>, ConfigError>
where
    T::Err: fmt::Display,
{
    if none.contains(&v.to_ascii_lowercase().as_str()) {
        Ok(None)
    } else {
        num(field, v).map(Some)
    }
}

impl ExperimentConfig {
    /// Every key accepted by [`set`](Self::set).
    pub const KEYS: &'static [&'static str] = &[
        "mode",
        "conflict_rates",
        "conflict_rate",
        "seeds",
        "seed",
        "clients",
        "peers",
        "orderers",
        "gateways",
        "block_size",
        "block_interval_ms",
        "cache_capacity",
        "crash_at_ms",
        "election_timeout_ms",
        "hot_assets",
        "cold_assets_per_client",
        "tx_per_client",
        "interarrival_ms",
        "interarrival",
        "malicious_fraction",
        "max_retries",
        "endorsements_required",
        "endorse_timeout_ms",
        "warmup_fraction",
        "client_gw_ms",
        "gw_peer_ms",
        "gw_orderer_ms",
        "orderer_orderer_ms",
        "orderer_peer_ms",
        "peer_peer_ms",
        "endorse_exec_ms",
        "vscc_ms",
        "mvcc_check_ms",
        "commit_per_tx_ms",
        "cache_rtt_ms",
        "oracle",
        "trace",
        "retry",
        "bump_write_set",
        "skip_peer_mvcc",
        "dump_ledger",
    ];

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        let c = &mut self.cost;
        match key.trim() {
            "mode" => self.modes = parse_modes(v)?,
            "conflict_rates" | "conflict_rate" => self.conflict_rates = list(key, v)?,
            "seeds" | "seed" => self.seeds = list(key, v)?,
            "clients" => self.clients = num(key, v)?,
            "peers" => self.peers = num(key, v)?,
            "orderers" => self.orderers = num(key, v)?,
            "gateways" => self.gateways = num(key, v)?,
            "block_size" => self.block_size = num(key, v)?,
            "block_interval_ms" => self.block_interval_ms = num(key, v)?,
            "cache_capacity" => self.cache_capacity = optional(key, v, &["unbounded", "none", "inf"])?,
            "crash_at_ms" => self.crash_at_ms = optional(key, v, &["none", "off", ""])?,
            "election_timeout_ms" => self.election_timeout_ms = num(key, v)?,
            "hot_assets" => self.hot_assets = num(key, v)?,
            "cold_assets_per_client" => self.cold_assets_per_client = num(key, v)?,
            "tx_per_client" => self.tx_per_client = num(key, v)?,
            "interarrival_ms" => self.interarrival_ms = num(key, v)?,
            "interarrival" => {
                self.interarrival = match v.to_ascii_lowercase().as_str() {
                    "fixed" => Interarrival::Fixed,
                    "exponential" => Interarrival::Exponential,
                    _ => return Err(invalid(key, format!("expected fixed or exponential, got {v:?}"))),
                }
            }
            "malicious_fraction" => self.malicious_fraction = num(key, v)?,
            "max_retries" => self.max_retries = num(key, v)?,
            "endorsements_required" => self.endorsements_required = num(key, v)?,
            "endorse_timeout_ms" => self.endorse_timeout_ms = num(key, v)?,
            "warmup_fraction" => self.warmup_fraction = num(key, v)?,
            "client_gw_ms" => c.client_gw_ms = num(key, v)?,
            "gw_peer_ms" => c.gw_peer_ms = num(key, v)?,
            "gw_orderer_ms" => c.gw_orderer_ms = num(key, v)?,
            "orderer_orderer_ms" => c.orderer_orderer_ms = num(key, v)?,
            "orderer_peer_ms" => c.orderer_peer_ms = num(key, v)?,
            "peer_peer_ms" => c.peer_peer_ms = num(key, v)?,
            "endorse_exec_ms" => c.endorse_exec_ms = num(key, v)?,
            "vscc_ms" => c.vscc_ms = num(key, v)?,
            "mvcc_check_ms" => c.mvcc_check_ms = num(key, v)?,
            "commit_per_tx_ms" => c.commit_per_tx_ms = num(key, v)?,
            "cache_rtt_ms" => c.cache_rtt_ms = num(key, v)?,
            "oracle" => self.oracle = flag(key, v)?,
            "trace" => self.trace = flag(key, v)?,
            "retry" => self.retry = flag(key, v)?,
            "bump_write_set" => self.bump_write_set = flag(key, v)?,
            "skip_peer_mvcc" => self.skip_peer_mvcc = flag(key, v)?,
            "dump_ledger" => self.dump_ledger = flag(key, v)?,
            other => return Err(invalid(other, "unknown key")),
        }
        Ok(())
    }

    /// Applies `key=value` text on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                message: format!("expected key = value, got {line:?}"),
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_text(&text)
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (k, v) =
            assignment.split_once('=').ok_or_else(|| invalid(assignment, "override must look like key=value"))?;
        self.set(k, v)
    }

    /// A set `SIM_SEED` value replaces the seed list with that one seed.
    pub fn apply_seed_env(&mut self, value: Option<&str>) -> Result<(), ConfigError> {
        if let Some(v) = value {
            self.seeds = vec![num("SIM_SEED", v.trim())?];
        }
        Ok(())
    }

    /// Checks every cross-field constraint and every run it expands to.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.modes.is_empty() {
            return Err(invalid("mode", "no mode selected"));
        }
        if self.conflict_rates.is_empty() {
            return Err(invalid("conflict_rates", "empty list"));
        }
        if let Some(p) = self.conflict_rates.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(invalid("conflict_rates", format!("{p} is outside [0, 1]")));
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "empty list"));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(invalid("warmup_fraction", format!("{} is outside [0, 1)", self.warmup_fraction)));
        }
        if self.skip_peer_mvcc && !self.modes.contains(&Mode::Og) {
            return Err(invalid("skip_peer_mvcc", "only affects og mode"));
        }
        for run in self.runs() {
            run.validate().map_err(|m| match m.split_once(": ") {
                Some((field, message)) => invalid(field, message),
                None => invalid("config", m),
            })?;
        }
        Ok(())
    }

    pub fn sim_config(&self, mode: Mode, conflict_rate: f64, seed: u64) -> SimConfig {
        SimConfig {
            mode,
            seed,
            workload: WorkloadConfig {
                clients: self.clients,
                hot_assets: self.hot_assets,
                cold_assets_per_client: self.cold_assets_per_client,
                conflict_rate,
                tx_per_client: self.tx_per_client,
                interarrival_ms: self.interarrival_ms,
                interarrival: self.interarrival,
                malicious_fraction: self.malicious_fraction,
                retry: self.retry,
                max_retries: self.max_retries,
            },
            peers: self.peers,
            gateways: self.gateways,
            orderers: self.orderers,
            block_size: self.block_size,
            block_interval_ms: self.block_interval_ms,
            cache_capacity: self.cache_capacity,
            bump_write_set: self.bump_write_set,
            election_timeout_ms: self.election_timeout_ms,
            endorsements_required: self.endorsements_required,
            endorse_timeout_ms: self.endorse_timeout_ms,
            crash_at_ms: self.crash_at_ms,
            cost: self.cost.clone(),
            skip_peer_mvcc: self.skip_peer_mvcc && mode == Mode::Og,
        }
    }

    /// The sweep, ordered by mode, then conflict rate, then seed.
    pub fn runs(&self) -> Vec<SimConfig> {
        let mut out = Vec::new();
        for &mode in &self.modes {
            for &p in &self.conflict_rates {
                for &seed in &self.seeds {
                    out.push(self.sim_config(mode, p, seed));
                }
            }
        }
        out
    }

    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

fn parse_modes(v: &str) -> Result<Vec<Mode>, ConfigError> {
    if v.eq_ignore_ascii_case("all") {
        return Ok(Mode::ALL.to_vec());
    }
    let mut modes: Vec<Mode> = v
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<Mode>().map_err(|e| invalid("mode", e.to_string())))
        .collect::<Result<_, _>>()?;
    modes.dedup();
    Ok(modes)
}
