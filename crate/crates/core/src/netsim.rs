//! Deterministic discrete-event engine.
//!
//! One virtual clock, one priority queue ordered by `(time, seq)`. Equal
//! timestamps are processed in the order they were scheduled. Nodes never
//! run concurrently; logical parallelism is expressed by scheduling replies
//! after a service-time delay.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};
use std::fmt;
use std::ops::{Add, Sub};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::TxId;

/// Simulated time in microseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    /// Rounds to the nearest microsecond; negative inputs clamp to zero.
    pub fn from_ms(ms: f64) -> SimTime {
        SimTime((ms.max(0.0) * 1000.0).round() as u64)
    }

    pub fn as_ms(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }

    pub fn times(self, n: u64) -> SimTime {
        SimTime(self.0 * n)
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_add(rhs.0))
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ms", self.as_ms())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeId {
    Client(u32),
    Gateway(u32),
    Peer(u32),
    Orderer(u32),
}

impl NodeId {
    /// Stable per-node identifier used to derive independent random streams.
    pub fn stream_id(self) -> u64 {
        let (role, idx) = match self {
            NodeId::Client(i) => (1u64, i),
            NodeId::Gateway(i) => (2, i),
            NodeId::Peer(i) => (3, i),
            NodeId::Orderer(i) => (4, i),
        };
        (role << 32) | u64::from(idx)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeId::Client(i) => write!(f, "client-{i}"),
            NodeId::Gateway(i) => write!(f, "gw-{i}"),
            NodeId::Peer(i) => write!(f, "peer-{i}"),
            NodeId::Orderer(i) => write!(f, "orderer-{i}"),
        }
    }
}

/// Independent random stream for one node under one root seed.
pub fn node_rng(seed: u64, node: NodeId) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(node.stream_id());
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LinkClass {
    /// Same host (a gateway and the peer it runs on, or a node to itself).
    Local,
    ClientGateway,
    GatewayPeer,
    GatewayOrderer,
    OrdererOrderer,
    OrdererPeer,
    PeerPeer,
}

/// Link latencies and per-operation service times, all in milliseconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub client_gw_ms: f64,
    pub gw_peer_ms: f64,
    pub gw_orderer_ms: f64,
    pub orderer_orderer_ms: f64,
    pub orderer_peer_ms: f64,
    pub peer_peer_ms: f64,
    pub endorse_exec_ms: f64,
    pub vscc_ms: f64,
    pub mvcc_check_ms: f64,
    pub commit_per_tx_ms: f64,
    pub cache_rtt_ms: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            client_gw_ms: 1.0,
            gw_peer_ms: 1.0,
            gw_orderer_ms: 1.0,
            orderer_orderer_ms: 1.0,
            orderer_peer_ms: 1.0,
            peer_peer_ms: 1.0,
            endorse_exec_ms: 5.0,
            vscc_ms: 1.0,
            mvcc_check_ms: 0.5,
            commit_per_tx_ms: 1.0,
            cache_rtt_ms: 1.0,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            ("client_gw_ms", self.client_gw_ms),
            ("gw_peer_ms", self.gw_peer_ms),
            ("gw_orderer_ms", self.gw_orderer_ms),
            ("orderer_orderer_ms", self.orderer_orderer_ms),
            ("orderer_peer_ms", self.orderer_peer_ms),
            ("peer_peer_ms", self.peer_peer_ms),
            ("endorse_exec_ms", self.endorse_exec_ms),
            ("vscc_ms", self.vscc_ms),
            ("mvcc_check_ms", self.mvcc_check_ms),
            ("commit_per_tx_ms", self.commit_per_tx_ms),
            ("cache_rtt_ms", self.cache_rtt_ms),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("{name}: must be a non-negative number, got {v}"));
            }
        }
        Ok(())
    }

    pub fn latency(&self, class: LinkClass) -> SimTime {
        SimTime::from_ms(match class {
            LinkClass::Local => 0.0,
            LinkClass::ClientGateway => self.client_gw_ms,
            LinkClass::GatewayPeer => self.gw_peer_ms,
            LinkClass::GatewayOrderer => self.gw_orderer_ms,
            LinkClass::OrdererOrderer => self.orderer_orderer_ms,
            LinkClass::OrdererPeer => self.orderer_peer_ms,
            LinkClass::PeerPeer => self.peer_peer_ms,
        })
    }

    pub fn endorse_exec(&self) -> SimTime {
        SimTime::from_ms(self.endorse_exec_ms)
    }

    pub fn vscc(&self) -> SimTime {
        SimTime::from_ms(self.vscc_ms)
    }

    pub fn mvcc_check(&self) -> SimTime {
        SimTime::from_ms(self.mvcc_check_ms)
    }

    pub fn commit_per_tx(&self) -> SimTime {
        SimTime::from_ms(self.commit_per_tx_ms)
    }

    pub fn cache_rtt(&self) -> SimTime {
        SimTime::from_ms(self.cache_rtt_ms)
    }
}

fn link_class(src: NodeId, dst: NodeId) -> LinkClass {
    use NodeId::*;
    if src == dst {
        return LinkClass::Local;
    }
    match (src, dst) {
        (Client(_), Gateway(_)) | (Gateway(_), Client(_)) => LinkClass::ClientGateway,
        (Client(_), Peer(_)) | (Peer(_), Client(_)) => LinkClass::ClientGateway,
        (Gateway(_), Peer(_)) | (Peer(_), Gateway(_)) => LinkClass::GatewayPeer,
        (Gateway(_), Orderer(_)) | (Orderer(_), Gateway(_)) => LinkClass::GatewayOrderer,
        (Client(_), Orderer(_)) | (Orderer(_), Client(_)) => LinkClass::GatewayOrderer,
        (Orderer(_), Orderer(_)) => LinkClass::OrdererOrderer,
        (Orderer(_), Peer(_)) | (Peer(_), Orderer(_)) => LinkClass::OrdererPeer,
        (Peer(_), Peer(_)) | (Gateway(_), Gateway(_)) | (Client(_), Client(_)) => LinkClass::PeerPeer,
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NetError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
}

/// What the trace needs to know about a payload.
pub trait Traceable {
    fn kind(&self) -> &'static str;
    fn tx_id(&self) -> Option<TxId> {
        None
    }
}

#[derive(Clone, Debug)]
pub struct Event<M> {
    pub time: SimTime,
    pub seq: u64,
    pub src: NodeId,
    pub target: NodeId,
    pub payload: M,
}

struct Queued<M>(Event<M>);

impl<M> PartialEq for Queued<M> {
    fn eq(&self, other: &Self) -> bool {
        (self.0.time, self.0.seq) == (other.0.time, other.0.seq)
    }
}

impl<M> Eq for Queued<M> {}

impl<M> PartialOrd for Queued<M> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<M> Ord for Queued<M> {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        (other.0.time, other.0.seq).cmp(&(self.0.time, self.0.seq))
    }
}

/// One line of the optional event trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub time: f64,
    pub seq: u64,
    pub target: String,
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub tx_id: Option<u64>,
}

pub struct Engine<M> {
    now: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Queued<M>>,
    nodes: BTreeSet<NodeId>,
    colocated: BTreeSet<(NodeId, NodeId)>,
    cost: CostModel,
    processed: u64,
    trace: Option<Vec<TraceRecord>>,
}

impl<M: Traceable> Engine<M> {
    pub fn new(cost: CostModel) -> Self {
        Engine {
            now: SimTime::ZERO,
            next_seq: 0,
            queue: BinaryHeap::new(),
            nodes: BTreeSet::new(),
            colocated: BTreeSet::new(),
            cost,
            processed: 0,
            trace: None,
        }
    }

    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn take_trace(&mut self) -> Option<Vec<TraceRecord>> {
        self.trace.take()
    }

    pub fn register(&mut self, node: NodeId) {
        self.nodes.insert(node);
    }

    /// Marks two nodes as sharing a host: messages between them take no time.
    pub fn colocate(&mut self, a: NodeId, b: NodeId) {
        self.colocated.insert((a, b));
        self.colocated.insert((b, a));
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn cost(&self) -> &CostModel {
        &self.cost
    }

    pub fn processed(&self) -> u64 {
        self.processed
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn link_latency(&self, src: NodeId, dst: NodeId) -> SimTime {
        if self.colocated.contains(&(src, dst)) {
            return SimTime::ZERO;
        }
        self.cost.latency(link_class(src, dst))
    }

    fn push(&mut self, time: SimTime, src: NodeId, target: NodeId, payload: M) -> u64 {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Queued(Event { time, seq, src, target, payload }));
        seq
    }

    /// Enqueues a node-local event at `now + delay`.
    pub fn schedule(&mut self, target: NodeId, payload: M, delay: SimTime) -> u64 {
        let at = self.now + delay;
        self.push(at, target, target, payload)
    }

    /// Enqueues a node-local event at an absolute time, never earlier than now.
    pub fn schedule_at(&mut self, target: NodeId, payload: M, at: SimTime) -> u64 {
        let at = at.max(self.now);
        self.push(at, target, target, payload)
    }

    /// Delivers `payload` to `dst` after the link latency.
    pub fn send(&mut self, src: NodeId, dst: NodeId, payload: M) -> Result<(), NetError> {
        self.send_after(src, dst, payload, SimTime::ZERO)
    }

    /// Like [`send`](Self::send), but the message leaves `src` only after `service`.
    pub fn send_after(&mut self, src: NodeId, dst: NodeId, payload: M, service: SimTime) -> Result<(), NetError> {
        for n in [src, dst] {
            if !self.nodes.contains(&n) {
                return Err(NetError::UnknownNode(n));
            }
        }
        let at = self.now + service + self.link_latency(src, dst);
        self.push(at, src, dst, payload);
        Ok(())
    }

    /// Pops the next event if its time does not exceed `limit`, advancing the clock.
    pub fn next_event(&mut self, limit: SimTime) -> Option<Event<M>> {
        let head = self.queue.peek()?;
        if head.0.time > limit {
            return None;
        }
        let Queued(ev) = self.queue.pop().expect("peeked");
        debug_assert!(ev.time >= self.now, "clock moved backwards");
        self.now = ev.time;
        self.processed += 1;
        if let Some(trace) = self.trace.as_mut() {
            trace.push(TraceRecord {
                time: ev.time.as_ms(),
                seq: ev.seq,
                target: ev.target.to_string(),
                kind: ev.payload.kind().to_string(),
                tx_id: ev.payload.tx_id().map(|t| t.0),
            });
        }
        Some(ev)
    }

    /// Processes events until the queue drains or the next event lies past `limit`.
    pub fn run_until<F>(&mut self, limit: SimTime, mut handler: F) -> u64
    where
        F: FnMut(&mut Engine<M>, Event<M>),
    {
        let mut count = 0;
        while let Some(ev) = self.next_event(limit) {
            handler(self, ev);
            count += 1;
        }
        count
    }
}

/// Writes trace records as JSON lines.
pub fn write_trace<W: std::io::Write>(records: &[TraceRecord], mut out: W) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
