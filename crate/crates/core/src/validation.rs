//! Validation and commit on peers.
//!
//! | mode     | per-transaction work        | commit rule                       |
//! |----------|-----------------------------|-----------------------------------|
//! | `og`     | VSCC, then MVCC vs. state   | vscc = pass and mvcc = pass       |
//! | `oemvcc` | VSCC only                   | skip vscc = fail or carried mvcc = fail |
//! | `ea`     | none                        | commit all, clear key-cache marks |
//!
//! Block processing is split in two steps so the simulation can charge the
//! service time before the commit becomes visible: [`PeerNode::prepare_block`]
//! decides every verdict against the current state, and
//! [`PeerNode::commit_prepared`] applies it.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::endorsement::PeerKeyCache;
use crate::gateway::{vscc, EndorsementPolicy, TxStatus};
use crate::identity::IdentityRegistry;
use crate::ledger::{Block, Check, Key, Ledger, LedgerError, PeerId, Transaction, TxId, Version, WorldState};
use crate::netsim::{CostModel, SimTime};
use crate::Mode;

/// Peer-side call site of the shared VSCC predicate.
pub fn peer_vscc(tx: &Transaction, policy: &EndorsementPolicy, registry: &IdentityRegistry) -> bool {
    vscc(tx, policy, registry)
}

/// Read-set check against the state as updated by earlier valid
/// transactions of the same block (`overlay`). Fails iff any read version
/// differs from the current one; a read of an absent key sees version 0.
pub fn peer_mvcc(tx: &Transaction, state: &WorldState, overlay: &BTreeMap<Key, Version>) -> bool {
    tx.rset.iter().all(|(key, read)| {
        let current = overlay.get(key).copied().unwrap_or_else(|| state.version_of(key));
        read == current
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseCost {
    pub vscc: SimTime,
    pub mvcc: SimTime,
    pub commit: SimTime,
}

impl PhaseCost {
    pub fn total(&self) -> SimTime {
        self.vscc + self.mvcc + self.commit
    }
}

/// A block with every local verdict decided, ready to commit.
#[derive(Clone, Debug)]
pub struct PreparedBlock {
    pub block: Block,
    pub cost: PhaseCost,
}

impl PreparedBlock {
    pub fn statuses(&self) -> impl Iterator<Item = (&Transaction, TxStatus)> {
        self.block.txs.iter().map(|t| (t, tx_status(t)))
    }
}

/// Terminal status implied by a transaction's local verdicts.
pub fn tx_status(tx: &Transaction) -> TxStatus {
    if tx.is_committable() {
        TxStatus::Committed
    } else if tx.vscc.is_fail() {
        TxStatus::InvalidVscc
    } else {
        TxStatus::InvalidMvcc
    }
}

#[derive(Clone, Debug)]
pub struct ValidationConfig {
    pub mode: Mode,
    pub policy: EndorsementPolicy,
    /// Fault injection: accept every read set in `og` mode.
    pub skip_peer_mvcc: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeerStats {
    pub vscc_time: SimTime,
    pub mvcc_time: SimTime,
    pub commit_time: SimTime,
    pub endorse_time: SimTime,
    pub endorsements: u64,
    pub early_invalid: u64,
    pub blocks: u64,
    pub duplicate_blocks: u64,
    pub cache_clears: u64,
}

pub struct PeerNode {
    pub id: PeerId,
    pub endorsing: bool,
    /// Index of the gateway hosted on this peer, if any.
    pub hosts_gateway: Option<u32>,
    pub ledger: Ledger,
    pub key_cache: PeerKeyCache,
    pub stats: PeerStats,
    inbox: BTreeMap<u64, Block>,
    busy: bool,
}

impl PeerNode {
    pub fn new(id: PeerId, endorsing: bool, hosts_gateway: Option<u32>, genesis: Block) -> Self {
        let mut ledger = Ledger::new();
        ledger.append_block(genesis).expect("genesis block");
        PeerNode {
            id,
            endorsing,
            hosts_gateway,
            ledger,
            key_cache: PeerKeyCache::new(),
            stats: PeerStats::default(),
            inbox: BTreeMap::new(),
            busy: false,
        }
    }

    /// Queues a delivered block. Returns false for a duplicate.
    pub fn receive_block(&mut self, block: Block) -> bool {
        if block.block_num < self.ledger.height() || self.inbox.contains_key(&block.block_num) {
            self.stats.duplicate_blocks += 1;
            return false;
        }
        self.inbox.insert(block.block_num, block);
        true
    }

    /// Takes the next in-sequence block if the peer is idle.
    pub fn next_ready(&mut self) -> Option<Block> {
        if self.busy {
            return None;
        }
        let block = self.inbox.remove(&self.ledger.height())?;
        self.busy = true;
        Some(block)
    }

    pub fn is_busy(&self) -> bool {
        self.busy
    }

    /// Decides local verdicts for `block` in block order against the current state.
    pub fn prepare_block(
        &self,
        mut block: Block,
        cfg: &ValidationConfig,
        registry: &IdentityRegistry,
        cost: &CostModel,
    ) -> Result<PreparedBlock, LedgerError> {
        if block.prev_hash != self.ledger.tail_hash() {
            return Err(LedgerError::HashChainMismatch { block_num: block.block_num });
        }
        let n = block.txs.len() as u64;
        let mut phase = PhaseCost { commit: cost.commit_per_tx().times(n), ..Default::default() };
        match cfg.mode {
            Mode::Og => {
                let mut overlay: BTreeMap<Key, Version> = BTreeMap::new();
                let state = self.ledger.world_state();
                for tx in &mut block.txs {
                    phase.vscc = phase.vscc + cost.vscc();
                    let vscc_ok = peer_vscc(tx, &cfg.policy, registry);
                    tx.vscc.settle(vscc_ok)?;
                    if !vscc_ok {
                        continue;
                    }
                    phase.mvcc = phase.mvcc + cost.mvcc_check();
                    let mvcc_ok = cfg.skip_peer_mvcc || peer_mvcc(tx, state, &overlay);
                    tx.mvcc.settle(mvcc_ok)?;
                    if mvcc_ok {
                        for key in tx.wset.keys() {
                            let cur = overlay.get(key).copied().unwrap_or_else(|| state.version_of(key));
                            overlay.insert(key.clone(), cur.next());
                        }
                    }
                }
            }
            Mode::Oemvcc => {
                for (tx, flag) in block.txs.iter_mut().zip(&block.flags) {
                    phase.vscc = phase.vscc + cost.vscc();
                    tx.vscc.settle(peer_vscc(tx, &cfg.policy, registry))?;
                    // the orderer's verdict travels in the block metadata
                    if *flag != Check::Unchecked {
                        tx.mvcc.settle(flag.is_pass())?;
                    }
                }
            }
            Mode::Ea => {
                for tx in &mut block.txs {
                    // VSCC ran on the gateway, MVCC on the orderer
                    tx.vscc.settle(true)?;
                    tx.mvcc.settle(true)?;
                }
            }
        }
        Ok(PreparedBlock { block, cost: phase })
    }

    /// Commits a prepared block and, in EA mode, clears the key-cache marks
    /// of every committed write key.
    pub fn commit_prepared(&mut self, prepared: PreparedBlock, mode: Mode) -> Result<usize, LedgerError> {
        let PreparedBlock { block, cost } = prepared;
        let cleared: BTreeSet<Key> = if mode == Mode::Ea {
            block.txs.iter().flat_map(|t| t.wset.keys().cloned()).collect()
        } else {
            BTreeSet::new()
        };
        let committed = self.ledger.append_block(block)?;
        for key in &cleared {
            self.key_cache.clear(key);
            self.stats.cache_clears += 1;
        }
        self.stats.vscc_time = self.stats.vscc_time + cost.vscc;
        self.stats.mvcc_time = self.stats.mvcc_time + cost.mvcc;
        self.stats.commit_time = self.stats.commit_time + cost.commit;
        self.stats.blocks += 1;
        self.busy = false;
        Ok(committed)
    }

    /// Convenience for tests and replays: prepare and commit in one step.
    pub fn validate_block(
        &mut self,
        block: Block,
        cfg: &ValidationConfig,
        registry: &IdentityRegistry,
        cost: &CostModel,
    ) -> Result<Vec<(TxId, TxStatus)>, LedgerError> {
        let prepared = self.prepare_block(block, cfg, registry, cost)?;
        let statuses = prepared.statuses().map(|(t, s)| (t.tx_id, s)).collect();
        self.commit_prepared(prepared, cfg.mode)?;
        Ok(statuses)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::{Principal, SigTag};
    use crate::ledger::{ClientId, EndorsementTag, ReadSet, WriteSet};
    use crate::workload::{Op, Proposal};

    fn registry() -> IdentityRegistry {
        IdentityRegistry::new(3)
    }

    fn policy() -> EndorsementPolicy {
        EndorsementPolicy::at_least(1, (0..4).map(PeerId).collect())
    }

    fn cfg(mode: Mode) -> ValidationConfig {
        ValidationConfig { mode, policy: policy(), skip_peer_mvcc: false }
    }

    fn genesis() -> Block {
        Block::genesis(["a", "b"].iter().map(|k| (Key::from(*k), b"g".to_vec())).collect())
    }

    /// Properly endorsed and signed transfer of `key` having read `version`.
    fn tx(id: u64, key: &str, version: u64) -> Transaction {
        let reg = registry();
        let rset: ReadSet = std::iter::once((Key::from(key), Version(version))).collect();
        let wset: WriteSet = std::iter::once((Key::from(key), format!("w{id}").into_bytes())).collect();
        let mut t = Transaction {
            tx_id: TxId(id),
            client: ClientId(1),
            gateway: 0,
            proposal: Some(Proposal { client: ClientId(1), op: Op::Transfer, target: Key::from(key), nonce: id }),
            rset,
            wset,
            endorsements: Vec::new(),
            client_sig: None,
            vscc: Check::Unchecked,
            mvcc: Check::Unchecked,
        };
        let tag = reg.identity(Principal::Peer(2)).sign(&t.endorsement_payload());
        t.endorsements.push(EndorsementTag { peer: PeerId(2), tag });
        t.client_sig = Some(reg.identity(Principal::Client(1)).sign(&t.envelope_payload()));
        t
    }

    fn peer() -> PeerNode {
        PeerNode::new(PeerId(0), true, Some(0), genesis())
    }

    fn block_on(p: &PeerNode, txs: Vec<Transaction>) -> Block {
        Block::seal(p.ledger.height(), p.ledger.tail_hash(), txs)
    }

    #[test]
    fn mvcc_matches_current_version() {
        let p = peer();
        let state = p.ledger.world_state();
        assert!(peer_mvcc(&tx(1, "a", 1), state, &BTreeMap::new()));
        assert!(!peer_mvcc(&tx(1, "a", 0), state, &BTreeMap::new()));
        // absent key reads as version 0, so any recorded read of it is stale
        assert!(!peer_mvcc(&tx(1, "zz", 3), state, &BTreeMap::new()));
    }

    #[test]
    fn vscc_rejects_forgery() {
        let good = tx(1, "a", 1);
        assert!(peer_vscc(&good, &policy(), &registry()));
        let mut forged = good.clone();
        forged.endorsements[0].tag = SigTag(1);
        assert!(!peer_vscc(&forged, &policy(), &registry()));
    }

    #[test]
    fn og_double_spend_in_one_block() {
        let mut p = peer();
        let b = block_on(&p, vec![tx(1, "a", 1), tx(2, "a", 1)]);
        let s = p.validate_block(b, &cfg(Mode::Og), &registry(), &CostModel::default()).unwrap();
        assert_eq!(s, vec![(TxId(1), TxStatus::Committed), (TxId(2), TxStatus::InvalidMvcc)]);
        assert_eq!(p.ledger.world_state().version_of(&Key::from("a")), Version(2));
        assert_eq!(p.stats.mvcc_time, SimTime::from_ms(1.0));
    }

    #[test]
    fn og_chain_within_block() {
        let mut p = peer();
        let b = block_on(&p, vec![tx(1, "a", 1), tx(2, "a", 2)]);
        let s = p.validate_block(b, &cfg(Mode::Og), &registry(), &CostModel::default()).unwrap();
        assert!(s.iter().all(|(_, st)| *st == TxStatus::Committed));
    }

    #[test]
    fn oemvcc_respects_carried_flags() {
        let mut p = peer();
        let mut txs = vec![tx(1, "a", 1), tx(2, "a", 1), tx(3, "b", 1)];
        txs[0].mvcc = Check::Pass;
        txs[1].mvcc = Check::Fail;
        txs[2].mvcc = Check::Pass;
        let b = block_on(&p, txs);
        let s = p.validate_block(b, &cfg(Mode::Oemvcc), &registry(), &CostModel::default()).unwrap();
        let committed = s.iter().filter(|(_, st)| *st == TxStatus::Committed).count();
        assert_eq!(committed, 2);
        assert_eq!(s[1].1, TxStatus::InvalidMvcc);
        assert_eq!(p.ledger.world_state().version_of(&Key::from("a")), Version(2));
        assert_eq!(p.ledger.world_state().version_of(&Key::from("b")), Version(2));
        assert_eq!(p.stats.mvcc_time, SimTime::ZERO);
        assert_eq!(p.stats.vscc_time, SimTime::from_ms(3.0));
    }

    #[test]
    fn oemvcc_skips_forged_tx() {
        let mut p = peer();
        let mut forged = tx(1, "a", 1);
        forged.endorsements[0].tag = SigTag(9);
        forged.mvcc = Check::Pass;
        let b = block_on(&p, vec![forged]);
        let s = p.validate_block(b, &cfg(Mode::Oemvcc), &registry(), &CostModel::default()).unwrap();
        assert_eq!(s, vec![(TxId(1), TxStatus::InvalidVscc)]);
        assert_eq!(p.ledger.world_state().version_of(&Key::from("a")), Version(1));
    }

    #[test]
    fn ea_commits_directly_and_clears_marks() {
        let mut p = peer();
        let keys = [Key::from("a"), Key::from("b")];
        p.key_cache.handle_peer_cache_mark(Mode::Ea, keys.iter());
        let mut txs = vec![tx(1, "a", 1), tx(2, "b", 1)];
        for t in &mut txs {
            t.mvcc = Check::Pass;
        }
        let b = block_on(&p, txs);
        let s = p.validate_block(b, &cfg(Mode::Ea), &registry(), &CostModel::default()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(p.key_cache.marked_count(), 0);
        assert_eq!(p.stats.cache_clears, 2);
        assert_eq!(p.stats.vscc_time, SimTime::ZERO);
        assert_eq!(p.stats.mvcc_time, SimTime::ZERO);
    }

    #[test]
    fn duplicate_delivery_commits_once() {
        let mut p = peer();
        let b = block_on(&p, vec![tx(1, "a", 1)]);
        assert!(p.receive_block(b.clone()));
        assert!(!p.receive_block(b.clone()));
        let ready = p.next_ready().unwrap();
        assert!(p.next_ready().is_none(), "busy while the first block is processing");
        p.validate_block(ready, &cfg(Mode::Og), &registry(), &CostModel::default()).unwrap();
        assert!(!p.receive_block(b));
        assert_eq!(p.ledger.height(), 2);
        assert_eq!(p.stats.duplicate_blocks, 2);
    }

    #[test]
    fn broken_chain_is_refused() {
        let p = peer();
        let b = Block::seal(1, crate::ledger::Digest::of(b"x"), vec![]);
        let err = p.prepare_block(b, &cfg(Mode::Og), &registry(), &CostModel::default()).unwrap_err();
        assert_eq!(err, LedgerError::HashChainMismatch { block_num: 1 });
    }

    #[test]
    fn replicas_converge() {
        let mut peers: Vec<PeerNode> = (0..4).map(|i| PeerNode::new(PeerId(i), true, None, genesis())).collect();
        let b1 = block_on(&peers[0], vec![tx(1, "a", 1), tx(2, "a", 1), tx(3, "b", 1)]);
        for p in &mut peers {
            p.validate_block(b1.clone(), &cfg(Mode::Og), &registry(), &CostModel::default()).unwrap();
        }
        let d = peers[0].ledger.world_state().digest();
        assert!(peers.iter().all(|p| p.ledger.world_state().digest() == d));
    }
}
