//! Client-facing gateway: endorsement fan-out, envelope assembly, VSCC and
//! notification routing.
//!
//! The gateway is a sans-IO state machine. Each handler returns the actions
//! the surrounding simulation must carry out.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::endorsement::EndorseReply;
use crate::identity::{IdentityRegistry, Principal};
use crate::ledger::{ClientId, EndorsementTag, Key, PeerId, Transaction, TxId};
use crate::workload::Proposal;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GatewayError {
    #[error("endorsement deadline expired for {0}")]
    EndorsementTimeout(TxId),
    #[error("endorsers returned different read/write sets for {0}")]
    EndorsementMismatch(TxId),
    #[error("{tx_id}: only {have} endorsements, policy requires {required}")]
    NotEnoughEndorsements { tx_id: TxId, have: usize, required: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndorsementPolicy {
    pub required: usize,
    pub eligible: Vec<PeerId>,
}

impl EndorsementPolicy {
    /// Panics if `required` is zero.
    pub fn at_least(required: usize, eligible: Vec<PeerId>) -> Self {
        assert!(required >= 1, "endorsement policy must require at least one endorsement");
        EndorsementPolicy { required, eligible }
    }
}

/// Terminal status reported to a client.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxStatus {
    Committed,
    InvalidMvcc,
    InvalidVscc,
    Rejected,
}

impl TxStatus {
    pub fn is_valid(self) -> bool {
        self == TxStatus::Committed
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TxStatus::Committed => "committed",
            TxStatus::InvalidMvcc => "invalid_mvcc",
            TxStatus::InvalidVscc => "invalid_vscc",
            TxStatus::Rejected => "rejected",
        }
    }
}

/// The predicate shared by gateway-side and peer-side VSCC.
///
/// Passes iff the envelope carries at least `required` endorsements from
/// eligible, distinct peers, every endorsement tag verifies over the
/// envelope's read/write sets, and the client signature verifies.
pub fn vscc(tx: &Transaction, policy: &EndorsementPolicy, registry: &IdentityRegistry) -> bool {
    if tx.endorsements.len() < policy.required {
        return false;
    }
    let payload = tx.endorsement_payload();
    let mut seen = Vec::with_capacity(tx.endorsements.len());
    for EndorsementTag { peer, tag } in &tx.endorsements {
        if seen.contains(peer) || !policy.eligible.contains(peer) {
            return false;
        }
        seen.push(*peer);
        if !registry.verify(Principal::Peer(peer.0), &payload, *tag) {
            return false;
        }
    }
    match tx.client_sig {
        Some(sig) => registry.verify(Principal::Client(tx.client.0), &tx.envelope_payload(), sig),
        None => false,
    }
}

/// Gateway-side call site of [`vscc`].
pub fn gateway_vscc(tx: &Transaction, policy: &EndorsementPolicy, registry: &IdentityRegistry) -> bool {
    vscc(tx, policy, registry)
}

#[derive(Clone, Debug)]
pub struct PendingProposal {
    pub tx_id: TxId,
    pub client: ClientId,
    pub proposal: Proposal,
    pub endorsers: Vec<PeerId>,
    pub replies: Vec<EndorseReply>,
}

/// What the gateway asks its environment to do.
#[derive(Clone, Debug, PartialEq)]
pub enum GatewayAction {
    RequestEndorsement {
        peer: PeerId,
        tx_id: TxId,
        proposal: Proposal,
    },
    ArmDeadline {
        tx_id: TxId,
    },
    /// Return the assembled envelope to the client for signing.
    ReturnEnvelope {
        client: ClientId,
        tx: Box<Transaction>,
    },
    ForwardToOrderer {
        tx: Box<Transaction>,
    },
    NotifyClient {
        client: ClientId,
        tx_id: TxId,
        status: TxStatus,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayStats {
    pub early_invalid: u64,
    /// EA: one endorser answered early-invalid, another endorsed.
    pub split_replies: u64,
    pub mismatches: u64,
    pub timeouts: u64,
    pub vscc_failures: u64,
    pub duplicate_notifications: u64,
    pub unknown_notifications: u64,
}

#[derive(Clone, Debug)]
enum Stage {
    Endorsing(PendingProposal),
    /// Envelope handed back to the client; awaiting submission or a verdict.
    Submitted,
    Done(TxStatus),
}

pub struct Gateway {
    pub index: u32,
    policy: EndorsementPolicy,
    txs: BTreeMap<TxId, (ClientId, Stage)>,
    pub stats: GatewayStats,
}

impl Gateway {
    pub fn new(index: u32, policy: EndorsementPolicy) -> Self {
        Gateway { index, policy, txs: BTreeMap::new(), stats: GatewayStats::default() }
    }

    pub fn policy(&self) -> &EndorsementPolicy {
        &self.policy
    }

    /// Fans a fresh proposal out to the client-chosen endorsers.
    pub fn submit_proposal(&mut self, tx_id: TxId, proposal: Proposal, endorsers: Vec<PeerId>) -> Vec<GatewayAction> {
        let client = proposal.client;
        let mut actions: Vec<GatewayAction> = endorsers
            .iter()
            .map(|&peer| GatewayAction::RequestEndorsement { peer, tx_id, proposal: proposal.clone() })
            .collect();
        actions.push(GatewayAction::ArmDeadline { tx_id });
        let pending = PendingProposal { tx_id, client, proposal, endorsers, replies: Vec::new() };
        self.txs.insert(tx_id, (client, Stage::Endorsing(pending)));
        actions
    }

    /// Registers a transaction that reaches the gateway without an
    /// endorsement round (a forged envelope on the bypass path).
    pub fn track_bypass(&mut self, tx: &Transaction) {
        self.txs.insert(tx.tx_id, (tx.client, Stage::Submitted));
    }

    pub fn on_endorse_reply(&mut self, reply: EndorseReply) -> Vec<GatewayAction> {
        let tx_id = reply.tx_id();
        let Some((client, stage)) = self.txs.get_mut(&tx_id) else {
            return Vec::new();
        };
        let client = *client;
        let pending = match stage {
            Stage::Endorsing(p) => p,
            _ => {
                if matches!(reply, EndorseReply::Endorsed(_)) {
                    self.stats.split_replies += 1;
                }
                return Vec::new();
            }
        };
        if let EndorseReply::EarlyInvalid { .. } = reply {
            if pending.replies.iter().any(|r| matches!(r, EndorseReply::Endorsed(_))) {
                self.stats.split_replies += 1;
            }
            self.stats.early_invalid += 1;
            return self.resolve(tx_id, client, TxStatus::InvalidMvcc);
        }
        pending.replies.push(reply);
        if pending.replies.len() < pending.endorsers.len() {
            return Vec::new();
        }
        let pending = pending.clone();
        match self.collect_endorsements(&pending) {
            Ok(tx) => {
                *self.txs.get_mut(&tx_id).map(|(_, s)| s).expect("present") = Stage::Submitted;
                vec![GatewayAction::ReturnEnvelope { client, tx: Box::new(tx) }]
            }
            Err(GatewayError::EndorsementMismatch(_)) => {
                self.stats.mismatches += 1;
                self.resolve(tx_id, client, TxStatus::Rejected)
            }
            Err(_) => self.resolve(tx_id, client, TxStatus::Rejected),
        }
    }

    /// Assembles an envelope once every selected endorser has replied.
    pub fn collect_endorsements(&self, pending: &PendingProposal) -> Result<Transaction, GatewayError> {
        let endorsed: Vec<_> = pending
            .replies
            .iter()
            .filter_map(|r| match r {
                EndorseReply::Endorsed(e) => Some(e),
                _ => None,
            })
            .collect();
        if endorsed.len() < self.policy.required || endorsed.is_empty() {
            return Err(GatewayError::NotEnoughEndorsements {
                tx_id: pending.tx_id,
                have: endorsed.len(),
                required: self.policy.required,
            });
        }
        let first = endorsed[0];
        if endorsed.iter().any(|e| e.rset != first.rset || e.wset != first.wset) {
            return Err(GatewayError::EndorsementMismatch(pending.tx_id));
        }
        Ok(Transaction {
            tx_id: pending.tx_id,
            client: pending.client,
            gateway: self.index,
            proposal: Some(pending.proposal.clone()),
            rset: first.rset.clone(),
            wset: first.wset.clone(),
            endorsements: endorsed.iter().map(|e| EndorsementTag { peer: e.peer, tag: e.tag }).collect(),
            client_sig: None,
            vscc: Default::default(),
            mvcc: Default::default(),
        })
    }

    pub fn on_deadline(&mut self, tx_id: TxId) -> Vec<GatewayAction> {
        match self.txs.get(&tx_id) {
            Some((client, Stage::Endorsing(_))) => {
                let client = *client;
                self.stats.timeouts += 1;
                self.resolve(tx_id, client, TxStatus::Rejected)
            }
            _ => Vec::new(),
        }
    }

    /// Result of gateway VSCC on a signed envelope (or `None` when VSCC is skipped).
    pub fn on_signed_envelope(&mut self, tx: Transaction, vscc_pass: Option<bool>) -> Vec<GatewayAction> {
        if let Some(false) = vscc_pass {
            self.stats.vscc_failures += 1;
            return self.resolve(tx.tx_id, tx.client, TxStatus::InvalidVscc);
        }
        vec![GatewayAction::ForwardToOrderer { tx: Box::new(tx) }]
    }

    /// Client aborted locally (not enough endorsements to sign).
    pub fn on_client_abort(&mut self, tx_id: TxId, client: ClientId) -> Vec<GatewayAction> {
        self.resolve(tx_id, client, TxStatus::Rejected)
    }

    /// Routes a verdict from the orderer or the committing peer. First verdict wins.
    pub fn route_notification(&mut self, tx_id: TxId, status: TxStatus) -> Vec<GatewayAction> {
        match self.txs.get(&tx_id) {
            None => {
                log::debug!("gateway {}: notification for unknown {tx_id} dropped", self.index);
                self.stats.unknown_notifications += 1;
                Vec::new()
            }
            Some((_, Stage::Done(_))) => {
                self.stats.duplicate_notifications += 1;
                Vec::new()
            }
            Some((client, _)) => {
                let client = *client;
                self.resolve(tx_id, client, status)
            }
        }
    }

    fn resolve(&mut self, tx_id: TxId, client: ClientId, status: TxStatus) -> Vec<GatewayAction> {
        self.txs.insert(tx_id, (client, Stage::Done(status)));
        vec![GatewayAction::NotifyClient { client, tx_id, status }]
    }

    pub fn status(&self, tx_id: TxId) -> Option<TxStatus> {
        match self.txs.get(&tx_id) {
            Some((_, Stage::Done(s))) => Some(*s),
            _ => None,
        }
    }

    pub fn unresolved(&self) -> usize {
        self.txs.values().filter(|(_, s)| !matches!(s, Stage::Done(_))).count()
    }
}

/// Key named by an early-invalid reply, if any.
pub fn early_invalid_key(reply: &EndorseReply) -> Option<&Key> {
    match reply {
        EndorseReply::EarlyInvalid { key, .. } => Some(key),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::endorsement::{endorse, PeerKeyCache};
    use crate::identity::SigTag;
    use crate::ledger::{Key, WorldState, WriteSet};
    use crate::workload::{sign_envelope, Op};
    use crate::Mode;

    fn registry() -> IdentityRegistry {
        IdentityRegistry::new(11)
    }

    fn state(version: u64) -> WorldState {
        let mut s = WorldState::new();
        let w: WriteSet = std::iter::once((Key::from("a"), b"v".to_vec())).collect();
        for _ in 0..version {
            s.apply_write_set(&w);
        }
        s
    }

    fn proposal() -> Proposal {
        Proposal { client: ClientId(3), op: Op::Transfer, target: Key::from("a"), nonce: 0 }
    }

    fn gw() -> Gateway {
        Gateway::new(0, EndorsementPolicy::at_least(1, (0..4).map(PeerId).collect()))
    }

    fn reply(peer: u32, mode: Mode, cache: &PeerKeyCache, s: &WorldState) -> EndorseReply {
        let id = registry().identity(Principal::Peer(peer));
        endorse(PeerId(peer), &id, TxId(7), &proposal(), mode, cache, s)
    }

    fn signed(tx: Transaction) -> Transaction {
        sign_envelope(&registry().identity(Principal::Client(3)), tx, 1).unwrap()
    }

    #[test]
    fn consistent_endorsements_build_envelope() {
        let mut g = gw();
        let acts = g.submit_proposal(TxId(7), proposal(), vec![PeerId(0), PeerId(2)]);
        assert_eq!(acts.len(), 3);
        let s = state(1);
        assert!(g.on_endorse_reply(reply(0, Mode::Og, &PeerKeyCache::new(), &s)).is_empty());
        let acts = g.on_endorse_reply(reply(2, Mode::Og, &PeerKeyCache::new(), &s));
        let [GatewayAction::ReturnEnvelope { tx, .. }] = acts.as_slice() else { panic!("{acts:?}") };
        assert_eq!(tx.endorsements.len(), 2);
        assert!(gateway_vscc(&signed((**tx).clone()), g.policy(), &registry()));
    }

    #[test]
    fn early_invalid_notifies_immediately() {
        let mut g = gw();
        g.submit_proposal(TxId(7), proposal(), vec![PeerId(0), PeerId(2)]);
        let mut cache = PeerKeyCache::new();
        cache.handle_peer_cache_mark(Mode::Ea, [&Key::from("a")]);
        let acts = g.on_endorse_reply(reply(0, Mode::Ea, &cache, &state(1)));
        assert_eq!(
            acts,
            vec![GatewayAction::NotifyClient { client: ClientId(3), tx_id: TxId(7), status: TxStatus::InvalidMvcc }]
        );
        // the second endorser's late endorsement is recorded but builds nothing
        let acts = g.on_endorse_reply(reply(2, Mode::Ea, &PeerKeyCache::new(), &state(1)));
        assert!(acts.is_empty());
        assert_eq!(g.stats.split_replies, 1);
    }

    #[test]
    fn diverged_versions_are_a_mismatch() {
        let mut g = gw();
        g.submit_proposal(TxId(7), proposal(), vec![PeerId(0), PeerId(1)]);
        g.on_endorse_reply(reply(0, Mode::Og, &PeerKeyCache::new(), &state(1)));
        let acts = g.on_endorse_reply(reply(1, Mode::Og, &PeerKeyCache::new(), &state(2)));
        assert!(matches!(acts[0], GatewayAction::NotifyClient { status: TxStatus::Rejected, .. }));
        assert_eq!(g.stats.mismatches, 1);
    }

    #[test]
    fn vscc_verdicts() {
        let mut g = gw();
        g.submit_proposal(TxId(7), proposal(), vec![PeerId(0), PeerId(1)]);
        let pending = PendingProposal {
            tx_id: TxId(7),
            client: ClientId(3),
            proposal: proposal(),
            endorsers: vec![PeerId(0)],
            replies: vec![reply(0, Mode::Og, &PeerKeyCache::new(), &state(1))],
        };
        let tx = g.collect_endorsements(&pending).unwrap();
        let good = signed(tx.clone());
        assert!(gateway_vscc(&good, g.policy(), &registry()));

        let mut forged = tx.clone();
        forged.endorsements[0].tag = SigTag(12345);
        let forged = signed(forged);
        assert!(!gateway_vscc(&forged, g.policy(), &registry()));

        let mut bare = good.clone();
        bare.endorsements.clear();
        assert!(!gateway_vscc(&bare, g.policy(), &registry()));

        let unsigned = tx;
        assert!(!gateway_vscc(&unsigned, g.policy(), &registry()));

        let acts = g.on_signed_envelope(forged, Some(false));
        assert!(matches!(acts[0], GatewayAction::NotifyClient { status: TxStatus::InvalidVscc, .. }));
    }

    #[test]
    fn first_notification_wins() {
        let mut g = gw();
        g.submit_proposal(TxId(7), proposal(), vec![PeerId(0), PeerId(1)]);
        let s = state(1);
        g.on_endorse_reply(reply(0, Mode::Og, &PeerKeyCache::new(), &s));
        g.on_endorse_reply(reply(1, Mode::Og, &PeerKeyCache::new(), &s));
        let a = g.route_notification(TxId(7), TxStatus::InvalidMvcc);
        assert_eq!(a.len(), 1);
        assert!(g.route_notification(TxId(7), TxStatus::Committed).is_empty());
        assert_eq!(g.status(TxId(7)), Some(TxStatus::InvalidMvcc));
        assert_eq!(g.stats.duplicate_notifications, 1);
    }

    #[test]
    fn unknown_notification_dropped() {
        let mut g = gw();
        assert!(g.route_notification(TxId(99), TxStatus::Committed).is_empty());
        assert_eq!(g.stats.unknown_notifications, 1);
    }

    #[test]
    fn deadline_rejects_only_while_endorsing() {
        let mut g = gw();
        g.submit_proposal(TxId(7), proposal(), vec![PeerId(0), PeerId(1)]);
        let acts = g.on_deadline(TxId(7));
        assert!(matches!(acts[0], GatewayAction::NotifyClient { status: TxStatus::Rejected, .. }));
        assert!(g.on_deadline(TxId(7)).is_empty());
        assert_eq!(g.unresolved(), 0);
    }

    #[test]
    fn failed_endorsements_reject() {
        let mut g = gw();
        let mut p = proposal();
        p.target = Key::from("missing");
        g.submit_proposal(TxId(7), p.clone(), vec![PeerId(0), PeerId(1)]);
        for peer in [0, 1] {
            let id = registry().identity(Principal::Peer(peer));
            let r = endorse(PeerId(peer), &id, TxId(7), &p, Mode::Og, &PeerKeyCache::new(), &state(1));
            let acts = g.on_endorse_reply(r);
            if peer == 1 {
                assert!(matches!(acts[0], GatewayAction::NotifyClient { status: TxStatus::Rejected, .. }));
            }
        }
    }
}
