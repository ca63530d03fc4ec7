//! Asset-transfer clients and their workload.
//!
//! Conflicts are modeled with two kinds of asset: a hot pool shared by all
//! clients and a private cold pool per client. With probability
//! `conflict_rate` a proposal targets a uniformly chosen hot asset,
//! otherwise one of the client's own cold assets. Cold transactions can
//! never conflict with another client's transactions.

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::identity::Identity;
use crate::ledger::{ClientId, Key, PeerId, Transaction, WriteSet};
use crate::netsim::SimTime;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WorkloadError {
    #[error("{0}")]
    Config(String),
    #[error("need at least 2 peers to pick endorsers, have {0}")]
    TooFewPeers(usize),
    #[error("envelope has {have} endorsements, policy requires {required}")]
    InsufficientEndorsements { have: usize, required: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interarrival {
    Fixed,
    Exponential,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadConfig {
    pub clients: u32,
    pub hot_assets: u32,
    pub cold_assets_per_client: u32,
    pub conflict_rate: f64,
    pub tx_per_client: u32,
    pub interarrival_ms: f64,
    pub interarrival: Interarrival,
    /// Fraction of envelopes that carry forged endorsements and skip gateway VSCC.
    pub malicious_fraction: f64,
    /// Re-submit a fresh proposal after an invalidation.
    pub retry: bool,
    pub max_retries: u32,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            clients: 10,
            hot_assets: 10,
            cold_assets_per_client: 50,
            conflict_rate: 0.5,
            tx_per_client: 100,
            interarrival_ms: 50.0,
            interarrival: Interarrival::Fixed,
            malicious_fraction: 0.0,
            retry: false,
            max_retries: 3,
        }
    }
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        let err = |m: String| Err(WorkloadError::Config(m));
        if !(0.0..=1.0).contains(&self.conflict_rate) {
            return err(format!("conflict_rate: must lie in [0, 1], got {}", self.conflict_rate));
        }
        if !(0.0..=1.0).contains(&self.malicious_fraction) {
            return err(format!("malicious_fraction: must lie in [0, 1], got {}", self.malicious_fraction));
        }
        if self.clients == 0 {
            return err("clients: must be at least 1".into());
        }
        if self.hot_assets == 0 && self.conflict_rate > 0.0 {
            return err("hot_assets: must be non-empty when conflict_rate > 0".into());
        }
        if self.cold_assets_per_client == 0 && self.conflict_rate < 1.0 {
            return err("cold_assets_per_client: must be non-empty when conflict_rate < 1".into());
        }
        if !(self.interarrival_ms.is_finite() && self.interarrival_ms > 0.0) {
            return err(format!("interarrival_ms: must be positive, got {}", self.interarrival_ms));
        }
        Ok(())
    }
}

/// Transaction kinds understood by the asset-transfer chaincode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    /// Read an asset and write it back with a new owner.
    Transfer,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Proposal {
    pub client: ClientId,
    pub op: Op,
    pub target: Key,
    pub nonce: u64,
}

impl Proposal {
    /// Keys the chaincode will touch. For a transfer, read keys = write keys.
    pub fn keys(&self) -> Vec<Key> {
        vec![self.target.clone()]
    }

    pub fn is_hot(&self) -> bool {
        is_hot_key(&self.target)
    }
}

pub fn is_hot_key(key: &Key) -> bool {
    key.as_str().starts_with("hot-")
}

pub fn hot_key(i: u32) -> Key {
    Key::new(format!("hot-{i}"))
}

pub fn cold_key(client: u32, j: u32) -> Key {
    Key::new(format!("cold-{client}-{j}"))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AssetPool {
    pub hot: Vec<Key>,
    /// Indexed by client id.
    pub cold: Vec<Vec<Key>>,
}

impl AssetPool {
    pub fn all_keys(&self) -> impl Iterator<Item = &Key> {
        self.hot.iter().chain(self.cold.iter().flatten())
    }

    pub fn len(&self) -> usize {
        self.hot.len() + self.cold.iter().map(Vec::len).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Write set of the genesis transaction: every asset with its initial record.
    pub fn genesis_write_set(&self) -> WriteSet {
        self.all_keys().map(|k| (k.clone(), format!("owner=genesis;asset={k}").into_bytes())).collect()
    }
}

pub fn init_asset_pool(cfg: &WorkloadConfig) -> Result<AssetPool, WorkloadError> {
    cfg.validate()?;
    Ok(AssetPool {
        hot: (0..cfg.hot_assets).map(hot_key).collect(),
        cold: (0..cfg.clients).map(|c| (0..cfg.cold_assets_per_client).map(|j| cold_key(c, j)).collect()).collect(),
    })
}

/// Draws the next proposal for `client`.
pub fn generate_proposal(
    client: ClientId,
    pool: &AssetPool,
    conflict_rate: f64,
    nonce: u64,
    rng: &mut ChaCha8Rng,
) -> Proposal {
    let own = &pool.cold[client.0 as usize];
    let hot = own.is_empty() || (!pool.hot.is_empty() && rng.random_bool(conflict_rate));
    let target = if hot {
        pool.hot[rng.random_range(0..pool.hot.len())].clone()
    } else {
        own[rng.random_range(0..own.len())].clone()
    };
    Proposal { client, op: Op::Transfer, target, nonce }
}

/// Uniform 2-subset of `peers`, returned in peer order.
pub fn select_endorsers(peers: &[PeerId], rng: &mut ChaCha8Rng) -> Result<Vec<PeerId>, WorkloadError> {
    if peers.len() < 2 {
        return Err(WorkloadError::TooFewPeers(peers.len()));
    }
    let mut picked: Vec<PeerId> = index::sample(rng, peers.len(), 2).into_iter().map(|i| peers[i]).collect();
    picked.sort();
    Ok(picked)
}

/// Signs an endorsed envelope on behalf of the client.
pub fn sign_envelope(identity: &Identity, mut tx: Transaction, required: usize) -> Result<Transaction, WorkloadError> {
    if tx.endorsements.len() < required || tx.endorsements.is_empty() {
        return Err(WorkloadError::InsufficientEndorsements { have: tx.endorsements.len(), required });
    }
    tx.client_sig = Some(identity.sign(&tx.envelope_payload()));
    Ok(tx)
}

/// Per-client generator state.
#[derive(Debug)]
pub struct Client {
    pub id: ClientId,
    pub gateway: u32,
    rng: ChaCha8Rng,
    pub issued: u32,
    next_nonce: u64,
}

impl Client {
    pub fn new(id: ClientId, gateway: u32, rng: ChaCha8Rng) -> Self {
        Client { id, gateway, rng, issued: 0, next_nonce: 0 }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn next_proposal(&mut self, pool: &AssetPool, conflict_rate: f64) -> Proposal {
        let nonce = self.next_nonce;
        self.next_nonce += 1;
        generate_proposal(self.id, pool, conflict_rate, nonce, &mut self.rng)
    }

    /// Uniform phase offset so clients do not submit in lock-step.
    pub fn start_offset(&mut self, cfg: &WorkloadConfig) -> SimTime {
        SimTime::from_ms(self.rng.random::<f64>() * cfg.interarrival_ms)
    }

    pub fn next_gap(&mut self, cfg: &WorkloadConfig) -> SimTime {
        match cfg.interarrival {
            Interarrival::Fixed => SimTime::from_ms(cfg.interarrival_ms),
            Interarrival::Exponential => {
                let exp = Exp::new(1.0 / cfg.interarrival_ms).expect("positive rate");
                SimTime::from_ms(exp.sample(&mut self.rng))
            }
        }
    }

    pub fn forges(&mut self, malicious_fraction: f64) -> bool {
        malicious_fraction > 0.0 && self.rng.random_bool(malicious_fraction)
    }
}
