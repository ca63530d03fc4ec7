//! Execution phase on endorsing peers.
//!
//! With execution avoidance enabled, a peer first consults its key cache:
//! a key marked by the ordering service belongs to an in-flight valid
//! transaction, so any new transaction on it would read a version that is
//! about to become stale. Such proposals are answered `EarlyInvalid`
//! without running the chaincode.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::identity::{Identity, SigTag};
use crate::ledger::{endorsement_payload, Key, PeerId, ReadSet, TxId, WorldState, WriteSet};
use crate::workload::{Op, Proposal};
use crate::Mode;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EndorseError {
    #[error("asset {0} not found")]
    AssetNotFound(Key),
}

/// Keys marked by the ordering service as written by in-flight valid transactions.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PeerKeyCache {
    marks: BTreeMap<Key, bool>,
}

impl PeerKeyCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_marked(&self, key: &Key) -> bool {
        self.marks.get(key).copied().unwrap_or(false)
    }

    /// Marks keys; unknown keys are stored too. Ignored outside EA mode.
    pub fn handle_peer_cache_mark<'a>(&mut self, mode: Mode, keys: impl IntoIterator<Item = &'a Key>) {
        if mode != Mode::Ea {
            return;
        }
        for k in keys {
            self.marks.insert(k.clone(), true);
        }
    }

    /// Commit-path reset of a single key.
    pub fn clear(&mut self, key: &Key) {
        if let Some(m) = self.marks.get_mut(key) {
            *m = false;
        }
    }

    pub fn marked_count(&self) -> usize {
        self.marks.values().filter(|m| **m).count()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endorsement {
    pub peer: PeerId,
    pub tx_id: TxId,
    pub rset: ReadSet,
    pub wset: WriteSet,
    pub tag: SigTag,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EndorseReply {
    Endorsed(Endorsement),
    /// Skipped by execution avoidance; carries the marked key.
    EarlyInvalid {
        peer: PeerId,
        tx_id: TxId,
        key: Key,
    },
    Failed {
        peer: PeerId,
        tx_id: TxId,
        error: EndorseError,
    },
}

impl EndorseReply {
    pub fn peer(&self) -> PeerId {
        match self {
            EndorseReply::Endorsed(e) => e.peer,
            EndorseReply::EarlyInvalid { peer, .. } | EndorseReply::Failed { peer, .. } => *peer,
        }
    }

    pub fn tx_id(&self) -> TxId {
        match self {
            EndorseReply::Endorsed(e) => e.tx_id,
            EndorseReply::EarlyInvalid { tx_id, .. } | EndorseReply::Failed { tx_id, .. } => *tx_id,
        }
    }

    /// Whether producing this reply ran the chaincode.
    pub fn executed(&self) -> bool {
        !matches!(self, EndorseReply::EarlyInvalid { .. })
    }
}

/// Runs the asset-transfer chaincode against a snapshot. Never mutates `state`.
pub fn simulate_chaincode(proposal: &Proposal, state: &WorldState) -> Result<(ReadSet, WriteSet), EndorseError> {
    match proposal.op {
        Op::Transfer => {
            let key = &proposal.target;
            let (_, version) = state.read_key(key).ok_or_else(|| EndorseError::AssetNotFound(key.clone()))?;
            let value = format!("owner=client-{};nonce={};from={}", proposal.client.0, proposal.nonce, version.0);
            let rset = std::iter::once((key.clone(), version)).collect();
            let wset = std::iter::once((key.clone(), value.into_bytes())).collect();
            Ok((rset, wset))
        }
    }
}

/// Endorsing-peer handler for one proposal.
pub fn endorse(
    peer: PeerId,
    identity: &Identity,
    tx_id: TxId,
    proposal: &Proposal,
    mode: Mode,
    cache: &PeerKeyCache,
    state: &WorldState,
) -> EndorseReply {
    if mode == Mode::Ea {
        // the proposal's keys are the union of read and write keys
        if let Some(key) = proposal.keys().into_iter().find(|k| cache.is_marked(k)) {
            return EndorseReply::EarlyInvalid { peer, tx_id, key };
        }
    }
    match simulate_chaincode(proposal, state) {
        Ok((rset, wset)) => {
            let tag = identity.sign(&endorsement_payload(tx_id, &rset, &wset));
            EndorseReply::Endorsed(Endorsement { peer, tx_id, rset, wset, tag })
        }
        Err(error) => EndorseReply::Failed { peer, tx_id, error },
    }
}
