//! Ordering service with orderer-side MVCC.
//!
//! A small leader group orders envelopes into blocks. In `oemvcc` and `ea`
//! modes the leader also validates every transaction's read set against a
//! version cache as soon as it is ordered:
//!
//! * a transaction fails iff some read key is cached with a version
//!   strictly greater than the version it read;
//! * on pass, every read key is cached at `read version + 1` on every
//!   replica (write-through) before the next check runs;
//! * failed transactions are reported to their gateway at once; in `ea`
//!   mode they are also dropped from the block, and each passing
//!   transaction's write keys are marked on all peers.
//!
//! Checks run one at a time in log order, so a verdict depends only on the
//! transactions ordered before it. Blocks are cut at `block_size` received
//! transactions or when `block_interval` has elapsed since the first
//! pending one, then held until every check in them has finished.
//!
//! The group is sans-IO: handlers return [`OrdererAction`]s for the
//! simulation to schedule.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::ledger::{Block, Check, Digest, Key, Transaction, TxId, Version};
use crate::netsim::SimTime;
use crate::Mode;

/// Orderer-side key -> expected version map with a bounded hot tier and an
/// unbounded persistent tier.
#[derive(Clone, Debug, Default)]
pub struct VersionCache {
    hot: BTreeMap<Key, (Version, u64)>,
    order: VecDeque<(u64, Key)>,
    cold: BTreeMap<Key, Version>,
    capacity: Option<usize>,
    stamp: u64,
}

impl VersionCache {
    /// `None` means unbounded.
    pub fn new(capacity: Option<usize>) -> Self {
        VersionCache { capacity, ..Default::default() }
    }

    pub fn get(&self, key: &Key) -> Option<Version> {
        self.hot.get(key).map(|(v, _)| *v).or_else(|| self.cold.get(key).copied())
    }

    pub fn contains(&self, key: &Key) -> bool {
        self.get(key).is_some()
    }

    /// Writes an entry into the hot tier as its newest member.
    pub fn insert(&mut self, key: Key, version: Version) {
        self.cold.remove(&key);
        self.stamp += 1;
        self.order.push_back((self.stamp, key.clone()));
        self.hot.insert(key, (version, self.stamp));
        self.evict_to_persistent();
    }

    /// Moves the oldest hot entries to the persistent tier until the hot
    /// tier fits its capacity.
    pub fn evict_to_persistent(&mut self) {
        if let Some(cap) = self.capacity {
            while self.hot.len() > cap {
                let Some((stamp, key)) = self.order.pop_front() else { break };
                // stale slots belong to entries rewritten since
                if self.hot.get(&key).is_some_and(|(_, s)| *s == stamp) {
                    let (v, _) = self.hot.remove(&key).expect("present");
                    self.cold.insert(key, v);
                }
            }
        }
        if self.order.len() > 4 * self.hot.len() + 64 {
            let hot = &self.hot;
            self.order.retain(|(s, k)| hot.get(k).is_some_and(|(_, hs)| hs == s));
        }
    }

    pub fn hot_len(&self) -> usize {
        self.hot.len()
    }

    pub fn cold_len(&self) -> usize {
        self.cold.len()
    }

    pub fn in_cold(&self, key: &Key) -> bool {
        self.cold.contains_key(key)
    }

    /// Merged view of both tiers.
    pub fn contents(&self) -> BTreeMap<Key, Version> {
        let mut all = self.cold.clone();
        all.extend(self.hot.iter().map(|(k, (v, _))| (k.clone(), *v)));
        all
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MvccOutcome {
    pub pass: bool,
    /// Entries written to the cache on pass; empty on fail.
    pub updates: Vec<(Key, Version)>,
}

/// Validates `tx` against `cache`, updating it on pass.
///
/// Keys absent from the cache are accepted at whatever version the
/// transaction read. With `bump_write_set`, written keys that were not read
/// are also advanced, when their current version is known.
pub fn orderer_mvcc(tx: &Transaction, cache: &mut VersionCache, bump_write_set: bool) -> MvccOutcome {
    let mut updates = Vec::with_capacity(tx.rset.len());
    for (key, version) in tx.rset.iter() {
        if cache.get(key).is_some_and(|cached| version < cached) {
            return MvccOutcome { pass: false, updates: Vec::new() };
        }
        updates.push((key.clone(), version.next()));
    }
    if bump_write_set {
        for key in tx.wset.keys() {
            if tx.rset.get(key).is_none() {
                if let Some(v) = cache.get(key) {
                    updates.push((key.clone(), v.next()));
                }
            }
        }
    }
    for (key, v) in &updates {
        cache.insert(key.clone(), *v);
    }
    MvccOutcome { pass: true, updates }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderingConfig {
    pub mode: Mode,
    pub members: u32,
    pub block_size: usize,
    pub block_interval: SimTime,
    pub cache_capacity: Option<usize>,
    pub bump_write_set: bool,
    pub mvcc_check: SimTime,
    pub cache_rtt: SimTime,
    pub election_timeout: SimTime,
}

impl Default for OrderingConfig {
    fn default() -> Self {
        OrderingConfig {
            mode: Mode::Oemvcc,
            members: 3,
            block_size: 10,
            block_interval: SimTime::from_ms(2000.0),
            cache_capacity: None,
            bump_write_set: false,
            mvcc_check: SimTime::from_ms(0.5),
            cache_rtt: SimTime::from_ms(1.0),
            election_timeout: SimTime::from_ms(50.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum OrdererAction {
    OrderAck {
        leader: u32,
        gateway: u32,
        tx_id: TxId,
    },
    Forward {
        from: u32,
        to: u32,
        tx: Box<Transaction>,
    },
    /// Completion of the MVCC check of log entry `index`.
    ScheduleCheck {
        leader: u32,
        at: SimTime,
        term: u64,
        index: usize,
    },
    ArmBlockTimer {
        leader: u32,
        at: SimTime,
        term: u64,
        batch: usize,
    },
    ScheduleElection {
        at: SimTime,
    },
    ReplicateCache {
        from: u32,
        to: u32,
        upto: usize,
        updates: Vec<(Key, Version)>,
    },
    InvalidNotify {
        leader: u32,
        gateway: u32,
        tx_id: TxId,
    },
    PeerCacheMark {
        leader: u32,
        tx_id: TxId,
        keys: Vec<Key>,
    },
    Broadcast {
        leader: u32,
        block: Box<Block>,
    },
}

#[derive(Clone, Debug)]
pub struct LogEntry {
    pub tx: Transaction,
    pub gateway: u32,
    pub arrived: SimTime,
    pub verdict: Option<bool>,
    pub verdict_at: Option<SimTime>,
    pub batch: usize,
}

#[derive(Clone, Debug)]
struct Batch {
    entries: Vec<usize>,
    first_pending: SimTime,
    cut_at: Option<SimTime>,
    emitted: bool,
}

#[derive(Clone, Debug)]
struct Member {
    alive: bool,
    cache: VersionCache,
    /// Log prefix length whose cache effects this replica holds.
    applied_upto: usize,
    buffered: Vec<Transaction>,
}

/// Timing facts about one emitted block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockStat {
    pub block_num: u64,
    pub received: usize,
    pub included: usize,
    pub first_pending: SimTime,
    pub cut_at: SimTime,
    /// Time the last check of a transaction in the block finished.
    pub drained_at: SimTime,
    pub broadcast_at: SimTime,
    /// The batch was open or sealed while a leader crash was being handled.
    pub spans_failover: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderingStats {
    pub received: u64,
    pub forwarded: u64,
    pub checks: u64,
    pub passes: u64,
    pub fails: u64,
    pub failovers: u64,
    pub replayed: u64,
    /// Replay produced a verdict different from the one already issued.
    pub verdict_flips: u64,
    /// A check ran while some live replica disagreed with the leader's cache.
    pub incoherent_checks: u64,
    pub dropped_updates: u64,
    pub mvcc_time: SimTime,
}

pub struct OrdererGroup {
    cfg: OrderingConfig,
    members: Vec<Member>,
    leader: Option<u32>,
    term: u64,
    log: Vec<LogEntry>,
    batches: Vec<Batch>,
    open: Option<usize>,
    check_cursor: usize,
    check_in_flight: bool,
    ready_at: SimTime,
    next_block: u64,
    prev_hash: Digest,
    next_emit: usize,
    last_broadcast: SimTime,
    failover_window: Option<(SimTime, SimTime)>,
    pub stats: OrderingStats,
    pub block_stats: Vec<BlockStat>,
}

impl OrdererGroup {
    pub fn new(cfg: OrderingConfig, genesis_hash: Digest) -> Self {
        assert!(cfg.members >= 1, "ordering service needs at least one member");
        assert!(cfg.block_size >= 1, "block_size must be at least 1");
        let members = (0..cfg.members)
            .map(|_| Member {
                alive: true,
                cache: VersionCache::new(cfg.cache_capacity),
                applied_upto: 0,
                buffered: Vec::new(),
            })
            .collect();
        OrdererGroup {
            cfg,
            members,
            leader: Some(0),
            term: 1,
            log: Vec::new(),
            batches: Vec::new(),
            open: None,
            check_cursor: 0,
            check_in_flight: false,
            ready_at: SimTime::ZERO,
            next_block: 1,
            prev_hash: genesis_hash,
            next_emit: 0,
            last_broadcast: SimTime::ZERO,
            failover_window: None,
            stats: OrderingStats::default(),
            block_stats: Vec::new(),
        }
    }

    pub fn config(&self) -> &OrderingConfig {
        &self.cfg
    }

    pub fn leader(&self) -> Option<u32> {
        self.leader
    }

    pub fn term(&self) -> u64 {
        self.term
    }

    pub fn is_alive(&self, member: u32) -> bool {
        self.members.get(member as usize).is_some_and(|m| m.alive)
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn cache_of(&self, member: u32) -> &VersionCache {
        &self.members[member as usize].cache
    }

    fn checks_enabled(&self) -> bool {
        self.cfg.mode != Mode::Og
    }

    /// An envelope arrives at orderer `at`.
    pub fn receive_transaction(&mut self, at: u32, tx: Transaction, now: SimTime) -> Vec<OrdererAction> {
        if !self.is_alive(at) {
            // the sender retries against a live member
            let to = self.lowest_alive().expect("ordering service has no live member");
            self.stats.forwarded += 1;
            return vec![OrdererAction::Forward { from: at, to, tx: Box::new(tx) }];
        }
        match self.leader {
            Some(l) if l == at => self.order(tx, now),
            Some(l) => {
                self.stats.forwarded += 1;
                vec![OrdererAction::Forward { from: at, to: l, tx: Box::new(tx) }]
            }
            None => {
                self.members[at as usize].buffered.push(tx);
                Vec::new()
            }
        }
    }

    fn order(&mut self, tx: Transaction, now: SimTime) -> Vec<OrdererAction> {
        let leader = self.leader.expect("ordering requires a leader");
        self.stats.received += 1;
        let mut actions = vec![OrdererAction::OrderAck { leader, gateway: tx.gateway, tx_id: tx.tx_id }];
        let batch = match self.open {
            Some(b) => b,
            None => {
                self.batches.push(Batch { entries: Vec::new(), first_pending: now, cut_at: None, emitted: false });
                let b = self.batches.len() - 1;
                self.open = Some(b);
                actions.push(OrdererAction::ArmBlockTimer {
                    leader,
                    at: now + self.cfg.block_interval,
                    term: self.term,
                    batch: b,
                });
                b
            }
        };
        let index = self.log.len();
        self.log.push(LogEntry { gateway: tx.gateway, tx, arrived: now, verdict: None, verdict_at: None, batch });
        self.batches[batch].entries.push(index);
        if self.checks_enabled() {
            actions.extend(self.maybe_start_check(now));
        }
        if self.batches[batch].entries.len() >= self.cfg.block_size {
            actions.extend(self.cut(batch, now));
        }
        actions
    }

    fn maybe_start_check(&mut self, now: SimTime) -> Vec<OrdererAction> {
        let Some(leader) = self.leader else { return Vec::new() };
        if self.check_in_flight || self.check_cursor >= self.log.len() {
            return Vec::new();
        }
        self.check_in_flight = true;
        let at = now.max(self.ready_at) + self.cfg.mvcc_check;
        vec![OrdererAction::ScheduleCheck { leader, at, term: self.term, index: self.check_cursor }]
    }

    /// Completion of a scheduled MVCC check.
    pub fn on_check_done(&mut self, term: u64, index: usize, now: SimTime) -> Vec<OrdererAction> {
        if term != self.term || index != self.check_cursor || !self.check_in_flight {
            return Vec::new();
        }
        let leader = self.leader.expect("checks run on a leader");
        self.check_in_flight = false;
        self.note_coherence(leader, index);

        let cache = &mut self.members[leader as usize].cache;
        let outcome = orderer_mvcc(&self.log[index].tx, cache, self.cfg.bump_write_set);
        self.members[leader as usize].applied_upto = index + 1;
        self.stats.checks += 1;
        self.stats.mvcc_time = self.stats.mvcc_time + self.cfg.mvcc_check;

        let entry = &mut self.log[index];
        entry.verdict = Some(outcome.pass);
        entry.verdict_at = Some(now);
        entry.tx.mvcc.settle(outcome.pass).expect("verdict issued once");
        let (tx_id, gateway) = (entry.tx.tx_id, entry.gateway);
        let wset_keys: Vec<Key> = entry.tx.wset.keys().cloned().collect();

        let mut actions = Vec::new();
        if outcome.pass {
            self.stats.passes += 1;
            actions.extend(self.replicate_cache(leader, index + 1, outcome.updates));
            if self.cfg.mode == Mode::Ea {
                actions.push(OrdererAction::PeerCacheMark { leader, tx_id, keys: wset_keys });
            }
            self.ready_at = now + self.cfg.cache_rtt;
        } else {
            self.stats.fails += 1;
            actions.push(OrdererAction::InvalidNotify { leader, gateway, tx_id });
            self.ready_at = now;
        }
        self.check_cursor += 1;
        actions.extend(self.maybe_start_check(now));
        actions.extend(self.try_emit(now));
        actions
    }

    /// Counts checks whose read keys are not cached identically on every
    /// live replica.
    fn note_coherence(&mut self, leader: u32, index: usize) {
        let reference = &self.members[leader as usize].cache;
        let incoherent = self.log[index].tx.rset.keys().any(|k| {
            let v = reference.get(k);
            self.members.iter().enumerate().any(|(i, m)| i as u32 != leader && m.alive && m.cache.get(k) != v)
        });
        if incoherent {
            self.stats.incoherent_checks += 1;
        }
    }

    /// Write-through of cache updates to every live follower.
    pub fn replicate_cache(&mut self, from: u32, upto: usize, updates: Vec<(Key, Version)>) -> Vec<OrdererAction> {
        if updates.is_empty() {
            return Vec::new();
        }
        (0..self.cfg.members)
            .filter(|&m| m != from && self.members[m as usize].alive)
            .map(|to| OrdererAction::ReplicateCache { from, to, upto, updates: updates.clone() })
            .collect()
    }

    /// A replication message reaches follower `to`. Messages from a member
    /// that crashed while they were in flight are lost.
    pub fn on_cache_update(&mut self, from: u32, to: u32, upto: usize, updates: &[(Key, Version)]) {
        if !self.is_alive(from) || !self.is_alive(to) {
            self.stats.dropped_updates += 1;
            return;
        }
        let m = &mut self.members[to as usize];
        for (k, v) in updates {
            m.cache.insert(k.clone(), *v);
        }
        m.applied_upto = m.applied_upto.max(upto);
    }

    pub fn on_block_timer(&mut self, term: u64, batch: usize, now: SimTime) -> Vec<OrdererAction> {
        if term != self.term || self.open != Some(batch) {
            return Vec::new();
        }
        self.cut(batch, now)
    }

    fn cut(&mut self, batch: usize, now: SimTime) -> Vec<OrdererAction> {
        self.batches[batch].cut_at = Some(now);
        if self.open == Some(batch) {
            self.open = None;
        }
        self.try_emit(now)
    }

    /// Emits every sealed batch, in order, whose checks have all finished.
    fn try_emit(&mut self, now: SimTime) -> Vec<OrdererAction> {
        let mut actions = Vec::new();
        let Some(leader) = self.leader else { return actions };
        while let Some(batch) = self.batches.get(self.next_emit) {
            let Some(cut_at) = batch.cut_at else { break };
            let checks = self.checks_enabled();
            if checks && batch.entries.iter().any(|&i| self.log[i].verdict.is_none()) {
                break;
            }
            let drained_at = if checks {
                batch.entries.iter().filter_map(|&i| self.log[i].verdict_at).max().unwrap_or(cut_at)
            } else {
                cut_at
            };
            let txs: Vec<Transaction> = batch
                .entries
                .iter()
                .map(|&i| &self.log[i])
                .filter(|e| self.cfg.mode != Mode::Ea || e.verdict == Some(true))
                .map(|e| e.tx.clone())
                .collect();
            let received = batch.entries.len();
            let first_pending = batch.first_pending;
            let spans_failover = self
                .failover_window
                .is_some_and(|(crash, elected)| first_pending <= elected && cut_at.max(drained_at) >= crash);
            self.batches[self.next_emit].emitted = true;
            self.next_emit += 1;

            let block = Block::seal(self.next_block, self.prev_hash, txs);
            debug_assert!(self.cfg.mode != Mode::Ea || block.flags.iter().all(|f| *f == Check::Pass));
            self.prev_hash = block.this_hash;
            self.next_block += 1;
            self.last_broadcast = now;
            self.block_stats.push(BlockStat {
                block_num: block.block_num,
                received,
                included: block.len(),
                first_pending,
                cut_at,
                drained_at,
                broadcast_at: now,
                spans_failover,
            });
            actions.push(OrdererAction::Broadcast { leader, block: Box::new(block) });
        }
        actions
    }

    fn lowest_alive(&self) -> Option<u32> {
        (0..self.cfg.members).find(|&m| self.members[m as usize].alive)
    }

    /// Scripted crash of `member`. A leader crash invalidates its pending
    /// checks and timers and starts an election.
    pub fn crash(&mut self, member: u32, now: SimTime) -> Vec<OrdererAction> {
        if !self.is_alive(member) {
            return Vec::new();
        }
        self.members[member as usize].alive = false;
        if self.leader != Some(member) {
            return Vec::new();
        }
        self.leader = None;
        self.term += 1;
        self.check_in_flight = false;
        self.failover_window = Some((now, SimTime::MAX));
        if self.lowest_alive().is_none() {
            return Vec::new();
        }
        vec![OrdererAction::ScheduleElection { at: now + self.cfg.election_timeout }]
    }

    /// Installs the lowest live member as leader and resynchronizes its cache.
    ///
    /// The new leader replays the log suffix its replica has not applied,
    /// using the same check, so already-issued verdicts are reproduced
    /// rather than re-issued. Unchecked entries are checked normally after
    /// the replay.
    pub fn leader_failover(&mut self, now: SimTime) -> Vec<OrdererAction> {
        if self.leader.is_some() {
            return Vec::new();
        }
        let Some(new_leader) = self.lowest_alive() else { return Vec::new() };
        self.leader = Some(new_leader);
        self.term += 1;
        self.stats.failovers += 1;
        if let Some((crash, _)) = self.failover_window {
            self.failover_window = Some((crash, now));
        }

        let verdicted = self.log.iter().take_while(|e| e.verdict.is_some()).count();
        let start = self.members[new_leader as usize].applied_upto.min(verdicted);
        let mut resync = Vec::new();
        for i in start..verdicted {
            let cache = &mut self.members[new_leader as usize].cache;
            let outcome = orderer_mvcc(&self.log[i].tx, cache, self.cfg.bump_write_set);
            self.stats.replayed += 1;
            if Some(outcome.pass) != self.log[i].verdict {
                self.stats.verdict_flips += 1;
            }
            resync.extend(outcome.updates);
        }
        self.members[new_leader as usize].applied_upto = verdicted;
        self.check_cursor = verdicted;
        self.check_in_flight = false;

        let replay_cost = self.cfg.mvcc_check.times((verdicted - start) as u64);
        let mut actions = Vec::new();
        if !resync.is_empty() {
            actions.extend(self.replicate_cache(new_leader, verdicted, resync));
            self.ready_at = now + replay_cost.max(self.cfg.cache_rtt);
        } else {
            self.ready_at = now + replay_cost;
        }

        if let Some(b) = self.open {
            let at = now.max(self.batches[b].first_pending + self.cfg.block_interval);
            actions.push(OrdererAction::ArmBlockTimer { leader: new_leader, at, term: self.term, batch: b });
        }
        if self.checks_enabled() {
            actions.extend(self.maybe_start_check(now));
        }
        actions.extend(self.try_emit(now));

        for m in 0..self.cfg.members {
            let buffered = std::mem::take(&mut self.members[m as usize].buffered);
            for tx in buffered {
                if m == new_leader {
                    actions.extend(self.order(tx, now));
                } else {
                    self.stats.forwarded += 1;
                    actions.push(OrdererAction::Forward { from: m, to: new_leader, tx: Box::new(tx) });
                }
            }
        }
        actions
    }

    /// Transactions received but not yet in an emitted block.
    pub fn pending(&self) -> usize {
        self.batches.iter().filter(|b| !b.emitted).map(|b| b.entries.len()).sum()
    }

    /// Verdict of every checked log entry, in log order.
    pub fn verdicts(&self) -> Vec<(TxId, bool)> {
        self.log.iter().filter_map(|e| e.verdict.map(|v| (e.tx.tx_id, v))).collect()
    }

    pub fn failover_window(&self) -> Option<(SimTime, SimTime)> {
        self.failover_window
    }
}
