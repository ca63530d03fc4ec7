//! Run checking: invariants, oracle diffs and replayed order-equivalence.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::gateway::EndorsementPolicy;
use crate::identity::IdentityRegistry;
use crate::ledger::{Block, Check, Digest, PeerId, Transaction, TxId};
use crate::metrics::{summarize, MetricsError, RunSummary, SummaryOptions};
use crate::netsim::{CostModel, SimTime};
use crate::oracle::{diff_verdicts, serial_oracle};
use crate::ordering::{orderer_mvcc, VersionCache};
use crate::sim::{simulate, RunResult, SimConfig};
use crate::validation::{PeerNode, ValidationConfig};
use crate::Mode;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub check: &'static str,
    pub detail: String,
}

impl Violation {
    fn new(check: &'static str, detail: impl Into<String>) -> Self {
        Violation { check, detail: detail.into() }
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.check, self.detail)
    }
}

/// Structural invariants every run must satisfy.
pub fn check_invariants(r: &RunResult) -> Vec<Violation> {
    let mut out = Vec::new();
    let cfg = &r.config;
    for e in &r.errors {
        out.push(Violation::new("protocol", e.clone()));
    }
    if r.metrics.protocol_bugs > 0 {
        out.push(Violation::new("protocol", format!("{} duplicate terminal events", r.metrics.protocol_bugs)));
    }
    if r.unresolved > 0 {
        out.push(Violation::new("notification", format!("{} proposals never resolved", r.unresolved)));
    }
    if let Some(rec) = r.metrics.records().find(|t| t.status.is_none()) {
        out.push(Violation::new("notification", format!("{} has no terminal status", rec.tx_id)));
    }
    if let Some(rec) = r.metrics.records().find(|t| t.notify.is_some_and(|n| n < t.submit)) {
        out.push(Violation::new("notification", format!("{} notified before submission", rec.tx_id)));
    }

    // replication and version monotonicity
    let reference = r.reference_peer().ledger.world_state().digest();
    let height = r.reference_peer().ledger.height();
    for p in &r.peers {
        if let Err(e) = p.ledger.verify_chain() {
            out.push(Violation::new("hash-chain", format!("peer-{}: {e}", p.id.0)));
        }
        for problem in p.ledger.audit_versions() {
            out.push(Violation::new("versions", format!("peer-{}: {problem}", p.id.0)));
        }
        if p.ledger.world_state().digest() != reference {
            out.push(Violation::new("replication", format!("peer-{} state digest differs", p.id.0)));
        }
        if p.ledger.height() != height {
            out.push(Violation::new(
                "replication",
                format!("peer-{} height {} vs {height}", p.id.0, p.ledger.height()),
            ));
        }
    }

    // block discipline
    let interval = SimTime::from_ms(cfg.block_interval_ms);
    for b in r.reference_peer().ledger.blocks().iter().skip(1) {
        if b.len() > cfg.block_size {
            out.push(Violation::new("block-size", format!("block {} holds {} txs", b.block_num, b.len())));
        }
        if cfg.mode == Mode::Ea && b.flags.iter().any(|f| *f != Check::Pass) {
            out.push(Violation::new("ea-purity", format!("block {} carries a non-pass flag", b.block_num)));
        }
    }
    for s in &r.ordering.block_stats {
        if s.received > cfg.block_size {
            out.push(Violation::new("block-size", format!("batch of block {} received {}", s.block_num, s.received)));
        }
        if s.spans_failover {
            continue;
        }
        if s.cut_at - s.first_pending > interval {
            out.push(Violation::new(
                "block-interval",
                format!("block {} cut {} after its first tx", s.block_num, s.cut_at - s.first_pending),
            ));
        }
        if s.broadcast_at != s.cut_at.max(s.drained_at) {
            out.push(Violation::new(
                "block-interval",
                format!("block {} broadcast at {} instead of after its drain", s.block_num, s.broadcast_at),
            ));
        }
    }

    // ordering service
    let st = &r.ordering.stats;
    if st.incoherent_checks > 0 {
        out.push(Violation::new("cache-coherence", format!("{} checks saw diverged replicas", st.incoherent_checks)));
    }
    if st.verdict_flips > 0 {
        out.push(Violation::new("failover", format!("{} verdicts flipped on replay", st.verdict_flips)));
    }
    if let Some(before) = &r.pre_crash_verdicts {
        let after = r.ordering.verdicts();
        if after.len() < before.len() || after[..before.len()] != before[..] {
            out.push(Violation::new("failover", "pre-crash verdicts changed"));
        }
    }
    if cfg.mode == Mode::Og && st.checks > 0 {
        out.push(Violation::new("peer-resources", "orderer ran MVCC in og mode"));
    }

    // peer resource accounting
    for p in &r.peers {
        if cfg.mode != Mode::Og && p.stats.mvcc_time != SimTime::ZERO {
            out.push(Violation::new("peer-resources", format!("peer-{} spent MVCC time in {}", p.id.0, cfg.mode)));
        }
        if cfg.mode == Mode::Ea && p.stats.vscc_time != SimTime::ZERO {
            out.push(Violation::new("peer-resources", format!("peer-{} spent VSCC time in ea", p.id.0)));
        }
    }
    out
}

/// Throughput cross-check: the reported count must equal the number of
/// client-notify events in the trace that fall inside the window.
pub fn check_throughput(r: &RunResult, s: &RunSummary) -> Vec<Violation> {
    let (start, end) = (s.window_start_ms, s.window_end_ms);
    let traced = r.trace.iter().filter(|e| e.kind == "ClientNotify" && e.time >= start && e.time <= end).count();
    let mut out = Vec::new();
    if traced != s.throughput.all.count {
        out.push(Violation::new(
            "throughput",
            format!("summary counts {} notifications, trace has {traced}", s.throughput.all.count),
        ));
    }
    if s.throughput.valid.count + s.throughput.invalid.count != s.throughput.all.count {
        out.push(Violation::new("throughput", "valid + invalid != all"));
    }
    let expected = traced as f64 / s.window_secs();
    if s.throughput.all.per_sec != expected {
        out.push(Violation::new(
            "throughput",
            format!("{} tx/s reported, {expected} recomputed", s.throughput.all.per_sec),
        ));
    }
    if !s.counts.conserved() {
        out.push(Violation::new("conservation", format!("{:?}", s.counts)));
    }
    out
}

/// Transactions in committed block order, genesis excluded.
pub fn committed_order(r: &RunResult) -> Vec<Transaction> {
    r.reference_peer().ledger.blocks().iter().skip(1).flat_map(|b| b.txs.iter().cloned()).collect()
}

/// Diffs the run against the serial referee. Returns one line per disagreement.
pub fn oracle_check(r: &RunResult) -> Vec<String> {
    let mut out = Vec::new();
    let state = r.reference_peer().ledger.world_state().digest();
    match r.config.mode {
        Mode::Og => {
            // VSCC is a per-envelope predicate; the referee judges what passes it
            let ordered: Vec<Transaction> = committed_order(r).into_iter().filter(|t| t.vscc.is_pass()).collect();
            let verdict = serial_oracle(&r.genesis, &ordered);
            let actual: Vec<(TxId, bool)> = ordered.iter().map(|t| (t.tx_id, t.mvcc.is_pass())).collect();
            push_diff(&mut out, "peer", &verdict.verdicts, &actual);
            if verdict.state_digest != state {
                out.push("final state differs from the serial referee".into());
            }
        }
        Mode::Oemvcc | Mode::Ea => {
            let log: Vec<Transaction> = r.ordering.log().iter().map(|e| e.tx.clone()).collect();
            let verdict = serial_oracle(&r.genesis, &log);
            push_diff(&mut out, "orderer", &verdict.verdicts, &r.ordering.verdicts());
            if r.forged.is_empty() && verdict.state_digest != state {
                out.push("final state differs from the serial referee over the ordered log".into());
            }
            if r.config.mode == Mode::Ea {
                let ordered = committed_order(r);
                let v = serial_oracle(&r.genesis, &ordered);
                for (id, ok) in v.verdicts.iter().filter(|(_, ok)| !ok) {
                    out.push(format!("{id} committed in ea mode but invalid under the referee ({ok})"));
                }
            }
        }
    }
    out
}

fn push_diff(out: &mut Vec<String>, who: &str, expected: &[(TxId, bool)], actual: &[(TxId, bool)]) {
    for m in diff_verdicts(expected, actual) {
        out.push(format!(
            "{who} verdict at position {} ({}): referee {:?}, simulator {:?}",
            m.position, m.tx_id, m.expected, m.actual
        ));
    }
}

/// Per-transaction commit decisions and final state of one replay.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReplayOutcome {
    pub committed: Vec<(TxId, bool)>,
    pub state: Digest,
}

/// Replays a fixed block sequence through og validation, and through
/// orderer MVCC plus oemvcc validation, on fresh peers.
pub fn replay_both(
    genesis: &Block,
    batches: &[Vec<Transaction>],
    policy: &EndorsementPolicy,
    registry: &IdentityRegistry,
    bump_write_set: bool,
) -> (ReplayOutcome, ReplayOutcome) {
    let cost = CostModel::default();
    let run = |mode: Mode| {
        let mut peer = PeerNode::new(PeerId(0), false, None, genesis.clone());
        let vcfg = ValidationConfig { mode, policy: policy.clone(), skip_peer_mvcc: false };
        let mut cache = VersionCache::new(None);
        let mut committed = Vec::new();
        for (i, batch) in batches.iter().enumerate() {
            let mut txs: Vec<Transaction> = batch.iter().map(fresh).collect();
            if mode == Mode::Oemvcc {
                for tx in &mut txs {
                    let outcome = orderer_mvcc(tx, &mut cache, bump_write_set);
                    tx.mvcc.settle(outcome.pass).expect("fresh envelope");
                }
            }
            let block = Block::seal(i as u64 + 1, peer.ledger.tail_hash(), txs);
            let statuses = peer.validate_block(block, &vcfg, registry, &cost).expect("replayed chain links");
            committed.extend(statuses.into_iter().map(|(id, s)| (id, s.is_valid())));
        }
        ReplayOutcome { committed, state: peer.ledger.world_state().digest() }
    };
    (run(Mode::Og), run(Mode::Oemvcc))
}

fn fresh(tx: &Transaction) -> Transaction {
    let mut t = tx.clone();
    t.vscc = Check::Unchecked;
    t.mvcc = Check::Unchecked;
    t
}

/// The run's ordering decisions as blocks of envelopes: every ordered
/// transaction, grouped as the orderer batched them.
pub fn ordered_batches(r: &RunResult) -> Vec<Vec<Transaction>> {
    let mut groups: BTreeMap<usize, Vec<Transaction>> = BTreeMap::new();
    for e in r.ordering.log() {
        groups.entry(e.batch).or_default().push(e.tx.clone());
    }
    groups.into_values().collect()
}

/// Order-equivalence of oemvcc and og on the run's own ordering decisions.
pub fn order_equivalence(r: &RunResult) -> Vec<String> {
    let genesis = &r.reference_peer().ledger.blocks()[0];
    let policy = EndorsementPolicy::at_least(r.config.endorsements_required, (0..r.config.peers).map(PeerId).collect());
    let registry = IdentityRegistry::new(r.config.seed);
    let batches = ordered_batches(r);
    let (og, oe) = replay_both(genesis, &batches, &policy, &registry, r.config.bump_write_set);
    let mut out = Vec::new();
    push_diff(&mut out, "oemvcc replay", &og.committed, &oe.committed);
    if og.state != oe.state {
        out.push("oemvcc replay final state differs from og replay".into());
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub warmup_fraction: f64,
    pub oracle: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { warmup_fraction: 0.1, oracle: false }
    }
}

pub struct RunOutcome {
    pub result: RunResult,
    pub summary: Result<RunSummary, MetricsError>,
    pub violations: Vec<Violation>,
    /// `None` unless the oracle diff was requested.
    pub oracle: Option<Vec<String>>,
}

impl RunOutcome {
    pub fn label(&self) -> String {
        let c = &self.result.config;
        format!("mode={} conflict_rate={} seed={}", c.mode, c.workload.conflict_rate, c.seed)
    }

    pub fn oracle_failed(&self) -> bool {
        self.oracle.as_ref().is_some_and(|m| !m.is_empty())
    }
}

pub fn run_single(cfg: SimConfig, opts: &RunOptions) -> Result<RunOutcome, String> {
    let result = simulate(cfg)?;
    let summary = summarize(
        &result.metrics,
        result.config.mode,
        result.config.workload.conflict_rate,
        result.config.seed,
        &SummaryOptions { warmup_fraction: opts.warmup_fraction, window: None },
    );
    let mut violations = check_invariants(&result);
    match &summary {
        Ok(s) => violations.extend(check_throughput(&result, s)),
        Err(e) => violations.push(Violation::new("summary", e.to_string())),
    }
    let oracle = opts.oracle.then(|| {
        let mut m = oracle_check(&result);
        if result.config.mode != Mode::Ea && result.forged.is_empty() {
            m.extend(order_equivalence(&result));
        }
        m
    });
    Ok(RunOutcome { result, summary, violations, oracle })
}

/// Runs every configuration in parallel; results keep the input order.
pub fn run_all(cfgs: Vec<SimConfig>, opts: &RunOptions) -> Vec<Result<RunOutcome, String>> {
    cfgs.into_par_iter().map(|c| run_single(c, opts)).collect()
}
