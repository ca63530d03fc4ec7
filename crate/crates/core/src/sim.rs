//! One simulated network run.
//!
//! Owns every node state machine and translates their actions into engine
//! messages. Topology: clients, one gateway per gateway-host peer, the
//! endorsing peers and the ordering group. Peers `0..peers` endorse; peer
//! `peers + g` is the non-endorsing host of gateway `g`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::endorsement::{endorse, EndorseReply};
use crate::gateway::{gateway_vscc, EndorsementPolicy, Gateway, GatewayAction, GatewayStats, TxStatus};
use crate::identity::{IdentityRegistry, Principal, SigTag};
use crate::ledger::{Block, ClientId, Key, PeerId, Transaction, TxId, Version, WorldState};
use crate::metrics::{EventKind, MetricsCollector};
use crate::netsim::{node_rng, CostModel, Engine, NodeId, SimTime, TraceRecord, Traceable};
use crate::ordering::{OrdererAction, OrdererGroup, OrderingConfig};
use crate::validation::{tx_status, PeerNode, PreparedBlock, ValidationConfig};
use crate::workload::{init_asset_pool, select_endorsers, sign_envelope, AssetPool, Client, Proposal, WorkloadConfig};
use crate::Mode;

/// Everything one run needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub mode: Mode,
    pub seed: u64,
    pub workload: WorkloadConfig,
    pub peers: u32,
    pub gateways: u32,
    pub orderers: u32,
    pub block_size: usize,
    pub block_interval_ms: f64,
    pub cache_capacity: Option<usize>,
    pub bump_write_set: bool,
    pub election_timeout_ms: f64,
    pub endorsements_required: usize,
    pub endorse_timeout_ms: f64,
    pub crash_at_ms: Option<f64>,
    pub cost: CostModel,
    /// Fault injection: peers accept every read set.
    pub skip_peer_mvcc: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            mode: Mode::Og,
            seed: 1,
            workload: WorkloadConfig::default(),
            peers: 4,
            gateways: 1,
            orderers: 3,
            block_size: 10,
            block_interval_ms: 2000.0,
            cache_capacity: None,
            bump_write_set: false,
            election_timeout_ms: 50.0,
            endorsements_required: 1,
            endorse_timeout_ms: 5000.0,
            crash_at_ms: None,
            cost: CostModel::default(),
            skip_peer_mvcc: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.workload.validate().map_err(|e| e.to_string())?;
        self.cost.validate()?;
        if self.peers < 2 {
            return Err(format!("peers: need at least 2 endorsing peers, got {}", self.peers));
        }
        if self.gateways < 1 {
            return Err("gateways: need at least 1".into());
        }
        if self.orderers < 1 {
            return Err("orderers: need at least 1".into());
        }
        if self.block_size < 1 {
            return Err("block_size: must be at least 1".into());
        }
        for (name, v) in [
            ("block_interval_ms", self.block_interval_ms),
            ("election_timeout_ms", self.election_timeout_ms),
            ("endorse_timeout_ms", self.endorse_timeout_ms),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name}: must be positive, got {v}"));
            }
        }
        if let Some(c) = self.crash_at_ms {
            if !(c.is_finite() && c >= 0.0) {
                return Err(format!("crash_at_ms: must be non-negative, got {c}"));
            }
            if self.orderers < 2 {
                return Err("crash_at_ms: a leader crash needs at least 2 orderers".into());
            }
        }
        if self.endorsements_required < 1 || self.endorsements_required > 2 {
            return Err(format!(
                "endorsements_required: must be 1 or 2 (clients pick 2 endorsers), got {}",
                self.endorsements_required
            ));
        }
        if self.mode == Mode::Ea && self.workload.malicious_fraction > 0.0 {
            return Err("malicious_fraction: must be 0 in ea mode, which assumes no malicious clients".into());
        }
        Ok(())
    }

    fn ordering(&self) -> OrderingConfig {
        OrderingConfig {
            mode: self.mode,
            members: self.orderers,
            block_size: self.block_size,
            block_interval: SimTime::from_ms(self.block_interval_ms),
            cache_capacity: self.cache_capacity,
            bump_write_set: self.bump_write_set,
            mvcc_check: self.cost.mvcc_check(),
            cache_rtt: self.cost.cache_rtt(),
            election_timeout: SimTime::from_ms(self.election_timeout_ms),
        }
    }
}

#[derive(Clone, Debug)]
pub enum Msg {
    ClientTick,
    Propose { tx_id: TxId, proposal: Proposal, endorsers: Vec<PeerId> },
    EndorseRequest { tx_id: TxId, gateway: u32, proposal: Proposal },
    EndorseReply(EndorseReply),
    EndorseDeadline(TxId),
    Envelope(Box<Transaction>),
    SubmitEnvelope { tx: Box<Transaction>, bypass: bool },
    GatewayVsccDone { tx: Box<Transaction>, pass: bool },
    ClientAbort(TxId),
    OrdererSubmit(Box<Transaction>),
    OrderAck(TxId),
    MvccDone { term: u64, index: usize },
    BlockTimer { term: u64, batch: usize },
    CacheUpdate { from: u32, upto: usize, updates: Vec<(Key, Version)> },
    Crash,
    Election,
    InvalidNotify(TxId),
    PeerCacheMark { tx_id: TxId, keys: Vec<Key> },
    BlockBroadcast(Box<Block>),
    BlockDone,
    CommitNotify { tx_id: TxId, status: TxStatus },
    ClientNotify { tx_id: TxId, status: TxStatus },
}

impl Traceable for Msg {
    fn kind(&self) -> &'static str {
        match self {
            Msg::ClientTick => "ClientTick",
            Msg::Propose { .. } => "Propose",
            Msg::EndorseRequest { .. } => "EndorseRequest",
            Msg::EndorseReply(_) => "EndorseReply",
            Msg::EndorseDeadline(_) => "EndorseDeadline",
            Msg::Envelope(_) => "Envelope",
            Msg::SubmitEnvelope { .. } => "SubmitEnvelope",
            Msg::GatewayVsccDone { .. } => "GatewayVsccDone",
            Msg::ClientAbort(_) => "ClientAbort",
            Msg::OrdererSubmit(_) => "OrdererSubmit",
            Msg::OrderAck(_) => "OrderAck",
            Msg::MvccDone { .. } => "MvccDone",
            Msg::BlockTimer { .. } => "BlockTimer",
            Msg::CacheUpdate { .. } => "CacheUpdate",
            Msg::Crash => "Crash",
            Msg::Election => "Election",
            Msg::InvalidNotify(_) => "InvalidNotify",
            Msg::PeerCacheMark { .. } => "PeerCacheMark",
            Msg::BlockBroadcast(_) => "BlockBroadcast",
            Msg::BlockDone => "BlockDone",
            Msg::CommitNotify { .. } => "CommitNotify",
            Msg::ClientNotify { .. } => "ClientNotify",
        }
    }

    fn tx_id(&self) -> Option<TxId> {
        match self {
            Msg::Propose { tx_id, .. }
            | Msg::EndorseRequest { tx_id, .. }
            | Msg::EndorseDeadline(tx_id)
            | Msg::ClientAbort(tx_id)
            | Msg::OrderAck(tx_id)
            | Msg::InvalidNotify(tx_id)
            | Msg::PeerCacheMark { tx_id, .. }
            | Msg::CommitNotify { tx_id, .. }
            | Msg::ClientNotify { tx_id, .. } => Some(*tx_id),
            Msg::EndorseReply(r) => Some(r.tx_id()),
            Msg::Envelope(tx)
            | Msg::SubmitEnvelope { tx, .. }
            | Msg::GatewayVsccDone { tx, .. }
            | Msg::OrdererSubmit(tx) => Some(tx.tx_id),
            _ => None,
        }
    }
}

struct ClientState {
    client: Client,
    identity: crate::identity::Identity,
}

/// Outcome of one run, with every node's final state kept for auditing.
pub struct RunResult {
    pub config: SimConfig,
    pub metrics: MetricsCollector,
    pub peers: Vec<PeerNode>,
    pub ordering: OrdererGroup,
    pub gateway_stats: Vec<GatewayStats>,
    pub unresolved: usize,
    pub trace: Vec<TraceRecord>,
    pub events: u64,
    pub final_time: SimTime,
    pub genesis: WorldState,
    /// Orderer verdicts as they stood when the scripted crash fired.
    pub pre_crash_verdicts: Option<Vec<(TxId, bool)>>,
    /// Envelopes a malicious client sent past gateway VSCC.
    pub forged: BTreeSet<TxId>,
    pub errors: Vec<String>,
}

impl RunResult {
    pub fn endorsing_peers(&self) -> impl Iterator<Item = &PeerNode> {
        self.peers.iter().filter(|p| p.endorsing)
    }

    /// The first gateway's host peer; its ledger stands for the network's.
    pub fn reference_peer(&self) -> &PeerNode {
        &self.peers[self.config.peers as usize]
    }
}

pub struct Simulation {
    cfg: SimConfig,
    engine: Engine<Msg>,
    registry: IdentityRegistry,
    pool: AssetPool,
    policy: EndorsementPolicy,
    vcfg: ValidationConfig,
    clients: Vec<ClientState>,
    gateways: Vec<Gateway>,
    peers: Vec<PeerNode>,
    prepared: Vec<Option<PreparedBlock>>,
    ordering: OrdererGroup,
    metrics: MetricsCollector,
    next_tx: u64,
    /// Retry chain length and target of each transaction.
    attempts: BTreeMap<TxId, (u32, Proposal)>,
    forged: BTreeSet<TxId>,
    pre_crash_verdicts: Option<Vec<(TxId, bool)>>,
    genesis: WorldState,
    errors: Vec<String>,
}

impl Simulation {
    pub fn new(cfg: SimConfig) -> Result<Self, String> {
        cfg.validate()?;
        let pool = init_asset_pool(&cfg.workload).map_err(|e| e.to_string())?;
        let genesis_block = Block::genesis(pool.genesis_write_set());
        let mut genesis = WorldState::new();
        genesis.apply_write_set(&pool.genesis_write_set());

        let mut engine = Engine::new(cfg.cost.clone());
        engine.enable_trace();

        let endorsers: Vec<PeerId> = (0..cfg.peers).map(PeerId).collect();
        let policy = EndorsementPolicy::at_least(cfg.endorsements_required, endorsers);
        let registry = IdentityRegistry::new(cfg.seed);

        let mut peers = Vec::new();
        for p in 0..cfg.peers {
            engine.register(NodeId::Peer(p));
            peers.push(PeerNode::new(PeerId(p), true, None, genesis_block.clone()));
        }
        let mut gateways = Vec::new();
        for g in 0..cfg.gateways {
            let host = cfg.peers + g;
            engine.register(NodeId::Peer(host));
            engine.register(NodeId::Gateway(g));
            engine.colocate(NodeId::Gateway(g), NodeId::Peer(host));
            peers.push(PeerNode::new(PeerId(host), false, Some(g), genesis_block.clone()));
            gateways.push(Gateway::new(g, policy.clone()));
        }
        for o in 0..cfg.orderers {
            engine.register(NodeId::Orderer(o));
        }
        let mut clients = Vec::new();
        for c in 0..cfg.workload.clients {
            let node = NodeId::Client(c);
            engine.register(node);
            let mut client = Client::new(ClientId(c), c % cfg.gateways, node_rng(cfg.seed, node));
            let offset = client.start_offset(&cfg.workload);
            engine.schedule(node, Msg::ClientTick, offset);
            clients.push(ClientState { client, identity: registry.identity(Principal::Client(c)) });
        }
        if let Some(at) = cfg.crash_at_ms {
            engine.schedule_at(NodeId::Orderer(0), Msg::Crash, SimTime::from_ms(at));
        }

        let ordering = OrdererGroup::new(cfg.ordering(), genesis_block.this_hash);
        let vcfg = ValidationConfig { mode: cfg.mode, policy: policy.clone(), skip_peer_mvcc: cfg.skip_peer_mvcc };
        let n_peers = peers.len();
        Ok(Simulation {
            cfg,
            engine,
            registry,
            pool,
            policy,
            vcfg,
            clients,
            gateways,
            peers,
            prepared: vec![None; n_peers],
            ordering,
            metrics: MetricsCollector::new(),
            next_tx: 1,
            attempts: BTreeMap::new(),
            forged: BTreeSet::new(),
            pre_crash_verdicts: None,
            genesis,
            errors: Vec::new(),
        })
    }

    /// Runs to quiescence.
    pub fn run(mut self) -> RunResult {
        while let Some(ev) = self.engine.next_event(SimTime::MAX) {
            self.dispatch(ev.src, ev.target, ev.payload);
        }
        let unresolved = self.gateways.iter().map(Gateway::unresolved).sum();
        let trace = self.engine.take_trace().unwrap_or_default();
        RunResult {
            events: self.engine.processed(),
            final_time: self.engine.now(),
            config: self.cfg,
            metrics: self.metrics,
            peers: self.peers,
            ordering: self.ordering,
            gateway_stats: self.gateways.into_iter().map(|g| g.stats).collect(),
            unresolved,
            trace,
            genesis: self.genesis,
            pre_crash_verdicts: self.pre_crash_verdicts,
            forged: self.forged,
            errors: self.errors,
        }
    }

    fn now(&self) -> SimTime {
        self.engine.now()
    }

    fn send(&mut self, src: NodeId, dst: NodeId, msg: Msg) {
        self.engine.send(src, dst, msg).expect("all nodes are registered at construction");
    }

    fn dispatch(&mut self, src: NodeId, target: NodeId, msg: Msg) {
        match target {
            NodeId::Client(c) => self.on_client(c, msg),
            NodeId::Gateway(g) => self.on_gateway(g, msg),
            NodeId::Peer(p) => self.on_peer(p, src, msg),
            NodeId::Orderer(o) => self.on_orderer(o, msg),
        }
    }

    fn on_client(&mut self, c: u32, msg: Msg) {
        let me = NodeId::Client(c);
        match msg {
            Msg::ClientTick => {
                let cs = &mut self.clients[c as usize];
                if cs.client.issued >= self.cfg.workload.tx_per_client {
                    return;
                }
                cs.client.issued += 1;
                let proposal = cs.client.next_proposal(&self.pool, self.cfg.workload.conflict_rate);
                self.issue(c, proposal, 0);
                let gap = self.clients[c as usize].client.next_gap(&self.cfg.workload);
                self.engine.schedule(me, Msg::ClientTick, gap);
            }
            Msg::Envelope(tx) => {
                let gw = NodeId::Gateway(self.clients[c as usize].client.gateway);
                let forged = self.forged.contains(&tx.tx_id);
                let mut tx = *tx;
                if forged {
                    for e in &mut tx.endorsements {
                        e.tag = SigTag(e.tag.0 ^ 0x5eed_f00d);
                    }
                }
                match sign_envelope(&self.clients[c as usize].identity, tx.clone(), self.policy.required) {
                    Ok(signed) => self.send(me, gw, Msg::SubmitEnvelope { tx: Box::new(signed), bypass: forged }),
                    Err(_) => self.send(me, gw, Msg::ClientAbort(tx.tx_id)),
                }
            }
            Msg::ClientNotify { tx_id, status } => {
                let now = self.now();
                if let Err(e) = self.metrics.record(EventKind::Notify(status), tx_id, now) {
                    self.errors.push(format!("client-{c}: {e}"));
                    return;
                }
                if self.cfg.workload.retry && !status.is_valid() {
                    let (n, proposal) = self.attempts[&tx_id].clone();
                    if n < self.cfg.workload.max_retries {
                        // same target, distinct nonce per attempt
                        let fresh = Proposal { nonce: proposal.nonce + (1 << 32) * u64::from(n + 1), ..proposal };
                        self.issue(c, fresh, n + 1);
                    }
                }
            }
            other => self.unexpected(NodeId::Client(c), &other),
        }
    }

    fn issue(&mut self, c: u32, proposal: Proposal, attempt: u32) {
        let tx_id = TxId(self.next_tx);
        self.next_tx += 1;
        let now = self.now();
        let endorsers: Vec<PeerId> = (0..self.cfg.peers).map(PeerId).collect();
        let cs = &mut self.clients[c as usize];
        let endorsers = select_endorsers(&endorsers, cs.client.rng()).expect("peer count validated");
        if cs.client.forges(self.cfg.workload.malicious_fraction) {
            self.forged.insert(tx_id);
        }
        let gw = cs.client.gateway;
        self.metrics.register(tx_id, ClientId(c), proposal.is_hot(), now);
        self.attempts.insert(tx_id, (attempt, proposal.clone()));
        self.send(NodeId::Client(c), NodeId::Gateway(gw), Msg::Propose { tx_id, proposal, endorsers });
    }

    fn on_gateway(&mut self, g: u32, msg: Msg) {
        let gi = g as usize;
        let actions = match msg {
            Msg::Propose { tx_id, proposal, endorsers } => {
                self.gateways[gi].submit_proposal(tx_id, proposal, endorsers)
            }
            Msg::EndorseReply(reply) => self.gateways[gi].on_endorse_reply(reply),
            Msg::EndorseDeadline(tx_id) => self.gateways[gi].on_deadline(tx_id),
            Msg::SubmitEnvelope { tx, bypass } => {
                if bypass || self.cfg.mode == Mode::Og {
                    self.gateways[gi].on_signed_envelope(*tx, None)
                } else {
                    let pass = gateway_vscc(&tx, &self.policy, &self.registry);
                    let delay = self.cfg.cost.vscc();
                    self.engine.schedule(NodeId::Gateway(g), Msg::GatewayVsccDone { tx, pass }, delay);
                    Vec::new()
                }
            }
            Msg::GatewayVsccDone { tx, pass } => self.gateways[gi].on_signed_envelope(*tx, Some(pass)),
            Msg::ClientAbort(tx_id) => {
                let client = self.metrics.get(tx_id).map(|r| r.client).unwrap_or(ClientId(u32::MAX));
                self.gateways[gi].on_client_abort(tx_id, client)
            }
            Msg::OrderAck(tx_id) => {
                let now = self.now();
                self.metrics.record(EventKind::OrderAck, tx_id, now).ok();
                Vec::new()
            }
            Msg::InvalidNotify(tx_id) => self.gateways[gi].route_notification(tx_id, TxStatus::InvalidMvcc),
            Msg::CommitNotify { tx_id, status } => self.gateways[gi].route_notification(tx_id, status),
            other => {
                self.unexpected(NodeId::Gateway(g), &other);
                Vec::new()
            }
        };
        self.apply_gateway(g, actions);
    }

    fn apply_gateway(&mut self, g: u32, actions: Vec<GatewayAction>) {
        let me = NodeId::Gateway(g);
        for action in actions {
            match action {
                GatewayAction::RequestEndorsement { peer, tx_id, proposal } => {
                    self.send(me, NodeId::Peer(peer.0), Msg::EndorseRequest { tx_id, gateway: g, proposal })
                }
                GatewayAction::ArmDeadline { tx_id } => {
                    self.engine.schedule(
                        me,
                        Msg::EndorseDeadline(tx_id),
                        SimTime::from_ms(self.cfg.endorse_timeout_ms),
                    );
                }
                GatewayAction::ReturnEnvelope { client, tx } => {
                    let now = self.now();
                    self.metrics.record(EventKind::EndorseDone, tx.tx_id, now).ok();
                    self.send(me, NodeId::Client(client.0), Msg::Envelope(tx));
                }
                GatewayAction::ForwardToOrderer { tx } => {
                    // gateways address the current leader, or member 0 during an election
                    let to = self.ordering.leader().unwrap_or(0);
                    self.send(me, NodeId::Orderer(to), Msg::OrdererSubmit(tx));
                }
                GatewayAction::NotifyClient { client, tx_id, status } => {
                    self.send(me, NodeId::Client(client.0), Msg::ClientNotify { tx_id, status })
                }
            }
        }
    }

    fn on_peer(&mut self, p: u32, src: NodeId, msg: Msg) {
        let pi = p as usize;
        let me = NodeId::Peer(p);
        match msg {
            Msg::EndorseRequest { tx_id, gateway, proposal } => {
                let peer = &mut self.peers[pi];
                let identity = self.registry.identity(Principal::Peer(p));
                let reply = endorse(
                    peer.id,
                    &identity,
                    tx_id,
                    &proposal,
                    self.cfg.mode,
                    &peer.key_cache,
                    peer.ledger.world_state(),
                );
                let service = if reply.executed() { self.cfg.cost.endorse_exec() } else { SimTime::ZERO };
                if reply.executed() {
                    peer.stats.endorsements += 1;
                    peer.stats.endorse_time = peer.stats.endorse_time + service;
                } else {
                    peer.stats.early_invalid += 1;
                }
                let now = self.now();
                self.metrics.record_endorsement(tx_id, now, now + service).ok();
                self.engine
                    .send_after(me, NodeId::Gateway(gateway), Msg::EndorseReply(reply), service)
                    .expect("registered");
            }
            Msg::PeerCacheMark { keys, .. } => {
                self.peers[pi].key_cache.handle_peer_cache_mark(self.cfg.mode, keys.iter());
            }
            Msg::BlockBroadcast(block) => {
                self.peers[pi].receive_block(*block);
                self.start_block(p);
            }
            Msg::BlockDone => self.finish_block(p),
            other => self.unexpected_from(me, src, &other),
        }
    }

    fn start_block(&mut self, p: u32) {
        let pi = p as usize;
        let Some(block) = self.peers[pi].next_ready() else { return };
        let num = block.block_num;
        match self.peers[pi].prepare_block(block, &self.vcfg, &self.registry, &self.cfg.cost) {
            Ok(prepared) => {
                let delay = prepared.cost.total();
                self.prepared[pi] = Some(prepared);
                self.engine.schedule(NodeId::Peer(p), Msg::BlockDone, delay);
            }
            Err(e) => self.errors.push(format!("peer-{p}: block {num}: {e}")),
        }
    }

    fn finish_block(&mut self, p: u32) {
        let pi = p as usize;
        let prepared = self.prepared[pi].take().expect("BlockDone without a prepared block");
        let notices: Vec<(TxId, u32, TxStatus)> =
            prepared.block.txs.iter().map(|t| (t.tx_id, t.gateway, tx_status(t))).collect();
        let num = prepared.block.block_num;
        if let Err(e) = self.peers[pi].commit_prepared(prepared, self.cfg.mode) {
            self.errors.push(format!("peer-{p}: commit of block {num}: {e}"));
            return;
        }
        if let Some(g) = self.peers[pi].hosts_gateway {
            let now = self.now();
            for (tx_id, gw, status) in notices {
                if gw != g {
                    continue;
                }
                self.metrics.record(EventKind::Verdict, tx_id, now).ok();
                self.send(NodeId::Peer(p), NodeId::Gateway(g), Msg::CommitNotify { tx_id, status });
            }
        }
        self.start_block(p);
    }

    fn on_orderer(&mut self, o: u32, msg: Msg) {
        let now = self.now();
        let actions = match msg {
            Msg::OrdererSubmit(tx) => self.ordering.receive_transaction(o, *tx, now),
            Msg::MvccDone { term, index } => self.ordering.on_check_done(term, index, now),
            Msg::BlockTimer { term, batch } => self.ordering.on_block_timer(term, batch, now),
            Msg::CacheUpdate { from, upto, updates } => {
                self.ordering.on_cache_update(from, o, upto, &updates);
                Vec::new()
            }
            Msg::Crash => match self.ordering.leader() {
                Some(leader) => {
                    self.pre_crash_verdicts = Some(self.ordering.verdicts());
                    log::info!("crashing orderer-{leader} at {now}");
                    self.ordering.crash(leader, now)
                }
                None => Vec::new(),
            },
            Msg::Election => self.ordering.leader_failover(now),
            other => {
                self.unexpected(NodeId::Orderer(o), &other);
                Vec::new()
            }
        };
        self.apply_ordering(actions);
    }

    fn apply_ordering(&mut self, actions: Vec<OrdererAction>) {
        let all_peers: Vec<u32> = (0..self.peers.len() as u32).collect();
        for action in actions {
            match action {
                OrdererAction::OrderAck { leader, gateway, tx_id } => {
                    self.send(NodeId::Orderer(leader), NodeId::Gateway(gateway), Msg::OrderAck(tx_id))
                }
                OrdererAction::Forward { from, to, tx } => {
                    self.send(NodeId::Orderer(from), NodeId::Orderer(to), Msg::OrdererSubmit(tx))
                }
                OrdererAction::ScheduleCheck { leader, at, term, index } => {
                    self.engine.schedule_at(NodeId::Orderer(leader), Msg::MvccDone { term, index }, at);
                }
                OrdererAction::ArmBlockTimer { leader, at, term, batch } => {
                    self.engine.schedule_at(NodeId::Orderer(leader), Msg::BlockTimer { term, batch }, at);
                }
                OrdererAction::ScheduleElection { at } => {
                    self.engine.schedule_at(NodeId::Orderer(0), Msg::Election, at);
                }
                OrdererAction::ReplicateCache { from, to, upto, updates } => {
                    // one-way half of the cache round trip
                    let delay = SimTime(self.cfg.cost.cache_rtt().0 / 2);
                    self.engine.schedule(NodeId::Orderer(to), Msg::CacheUpdate { from, upto, updates }, delay);
                }
                OrdererAction::InvalidNotify { leader, gateway, tx_id } => {
                    let now = self.now();
                    self.metrics.record(EventKind::Verdict, tx_id, now).ok();
                    self.send(NodeId::Orderer(leader), NodeId::Gateway(gateway), Msg::InvalidNotify(tx_id));
                }
                OrdererAction::PeerCacheMark { leader, tx_id, keys } => {
                    for &p in &all_peers {
                        let msg = Msg::PeerCacheMark { tx_id, keys: keys.clone() };
                        self.send(NodeId::Orderer(leader), NodeId::Peer(p), msg);
                    }
                }
                OrdererAction::Broadcast { leader, block } => {
                    for &p in &all_peers {
                        self.send(NodeId::Orderer(leader), NodeId::Peer(p), Msg::BlockBroadcast(block.clone()));
                    }
                }
            }
        }
    }

    fn unexpected(&mut self, node: NodeId, msg: &Msg) {
        self.errors.push(format!("{node}: unexpected {}", msg.kind()));
    }

    fn unexpected_from(&mut self, node: NodeId, src: NodeId, msg: &Msg) {
        self.errors.push(format!("{node}: unexpected {} from {src}", msg.kind()));
    }
}

/// Builds and runs one simulation.
pub fn simulate(cfg: SimConfig) -> Result<RunResult, String> {
    Ok(Simulation::new(cfg)?.run())
}
