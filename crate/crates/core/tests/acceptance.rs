//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion failed.

use std::collections::BTreeMap;
use std::fs;
use std::time::{Duration, Instant};

use eovsim_core::config::ExperimentConfig;
use eovsim_core::experiment::{run_experiment, ExitStatus};
use eovsim_core::gateway::EndorsementPolicy;
use eovsim_core::harness::{check_invariants, check_throughput, ordered_batches, replay_both};
use eovsim_core::identity::IdentityRegistry;
use eovsim_core::ledger::{Block, Check, Transaction, Value};
use eovsim_core::metrics::{summarize, RunSummary, SummaryOptions};
use eovsim_core::sim::{simulate, RunResult, SimConfig};
use eovsim_core::workload::Interarrival;
use eovsim_core::{Key, Mode, PeerId, TxId};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const CONFIGS: usize = 20;
const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const MAX_BLOCK: usize = 10;
const INTERVAL_MS: u64 = 2000;
const PER_RUN_BUDGET: Duration = Duration::from_secs(10);

// ---------------------------------------------------------------------------
// independent serial referee

type State = BTreeMap<Key, (Value, u64)>;

fn genesis_state(genesis: &Block) -> State {
    let mut s = State::new();
    for tx in &genesis.txs {
        apply(&mut s, tx);
    }
    s
}

fn apply(s: &mut State, tx: &Transaction) {
    for (k, v) in tx.wset.iter() {
        let ver = s.get(k).map_or(0, |e| e.1) + 1;
        s.insert(k.clone(), (v.clone(), ver));
    }
}

/// Re-executes `txs` one at a time. A transaction is valid iff every key it
/// read is still at the version it read.
fn referee<'a>(genesis: &Block, txs: impl IntoIterator<Item = &'a Transaction>) -> (Vec<(TxId, bool)>, State) {
    let mut s = genesis_state(genesis);
    let mut verdicts = Vec::new();
    for tx in txs {
        let ok = tx.rset.iter().all(|(k, v)| s.get(k).map_or(0, |e| e.1) == v.0);
        if ok {
            apply(&mut s, tx);
        }
        verdicts.push((tx.tx_id, ok));
    }
    (verdicts, s)
}

fn peer_state(r: &RunResult, i: usize) -> State {
    r.peers[i].ledger.world_state().iter().map(|(k, v, ver)| (k.clone(), (v.clone(), ver.0))).collect()
}

// ---------------------------------------------------------------------------
// run bookkeeping

struct Run {
    r: RunResult,
    s: RunSummary,
    elapsed: Duration,
}

impl Run {
    fn label(&self) -> String {
        let c = &self.r.config;
        format!("mode={} conflict_rate={} seed={}", c.mode, c.workload.conflict_rate, c.seed)
    }
}

fn execute(cfgs: Vec<SimConfig>) -> Vec<Run> {
    cfgs.into_par_iter()
        .map(|c| {
            let t = Instant::now();
            let r = simulate(c).expect("valid configuration");
            let elapsed = t.elapsed();
            let s = summarize(
                &r.metrics,
                r.config.mode,
                r.config.workload.conflict_rate,
                r.config.seed,
                &SummaryOptions { warmup_fraction: 0.1, window: None },
            )
            .expect("non-empty window");
            Run { r, s, elapsed }
        })
        .collect()
}

fn base(mode: Mode, rate: f64, seed: u64) -> SimConfig {
    let mut c = SimConfig { mode, seed, ..SimConfig::default() };
    c.workload.conflict_rate = rate;
    c
}

/// Random configurations of 1000 transactions each.
fn random_configs(mode: Mode) -> Vec<SimConfig> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce);
    (0..CONFIGS)
        .map(|_| {
            let rate = *[0.2, 0.5, 0.8].choose(&mut rng).unwrap();
            let mut c = base(mode, rate, rng.random_range(1..1_000_000));
            let clients = *[5u32, 10, 20, 25].choose(&mut rng).unwrap();
            c.workload.clients = clients;
            c.workload.tx_per_client = 1000 / clients;
            c.workload.hot_assets = rng.random_range(4..=20);
            c.workload.interarrival_ms = *[20.0, 50.0, 100.0].choose(&mut rng).unwrap();
            c.workload.interarrival =
                if rng.random_bool(0.5) { Interarrival::Fixed } else { Interarrival::Exponential };
            c.peers = rng.random_range(4..=6);
            c
        })
        .collect()
}

struct Report {
    lines: Vec<(usize, bool, String)>,
}

impl Report {
    fn record(&mut self, n: usize, problems: &[String], detail: String) {
        let ok = problems.is_empty();
        let mut line = detail;
        if let Some(p) = problems.first() {
            line = format!("{line}; {} problem(s), first: {p}", problems.len());
        }
        println!("criterion {n:>2}: {} {line}", if ok { "PASS" } else { "FAIL" });
        self.lines.push((n, ok, line));
    }
}

// ---------------------------------------------------------------------------
// per-criterion checks

fn og_matches_referee(run: &Run) -> Vec<String> {
    let r = &run.r;
    let refp = r.config.peers as usize;
    let blocks = r.peers[refp].ledger.blocks();
    let ordered: Vec<&Transaction> = blocks.iter().skip(1).flat_map(|b| &b.txs).filter(|t| t.vscc.is_pass()).collect();
    let (expected, state) = referee(&blocks[0], ordered.iter().copied());
    let mut out = Vec::new();
    for ((id, want), tx) in expected.iter().zip(&ordered) {
        if tx.mvcc.is_pass() != *want {
            out.push(format!("{}: {id} peer says {:?}, referee {want}", run.label(), tx.mvcc));
        }
    }
    if peer_state(r, refp) != state {
        out.push(format!("{}: final state differs from referee", run.label()));
    }
    let digest = r.peers[refp].ledger.world_state().digest();
    if r.peers.iter().any(|p| p.ledger.world_state().digest() != digest) {
        out.push(format!("{}: peer digests differ", run.label()));
    }
    out
}

fn replay_equivalent(run: &Run) -> Vec<String> {
    let r = &run.r;
    let genesis = &r.peers[r.config.peers as usize].ledger.blocks()[0];
    let policy = EndorsementPolicy::at_least(r.config.endorsements_required, (0..r.config.peers).map(PeerId).collect());
    let registry = IdentityRegistry::new(r.config.seed);
    let batches = ordered_batches(r);
    let (og, oe) = replay_both(genesis, &batches, &policy, &registry, r.config.bump_write_set);
    let mut out = Vec::new();
    if og.committed != oe.committed {
        let n = og.committed.iter().zip(&oe.committed).filter(|(a, b)| a != b).count();
        out.push(format!("{}: {n} verdicts differ between og and oemvcc replay", run.label()));
    }
    if og.state != oe.state {
        out.push(format!("{}: replay states differ", run.label()));
    }
    let (expected, _) = referee(genesis, batches.iter().flatten());
    if expected != og.committed {
        out.push(format!("{}: og replay disagrees with referee", run.label()));
    }
    out
}

fn ea_pure(run: &Run) -> Vec<String> {
    let r = &run.r;
    let mut out = Vec::new();
    for p in &r.peers {
        for b in p.ledger.blocks().iter().skip(1) {
            if b.flags.iter().any(|f| *f != Check::Pass) || b.txs.iter().any(|t| t.mvcc != Check::Pass) {
                out.push(format!(
                    "{}: peer-{} block {} carries a non-pass transaction",
                    run.label(),
                    p.id.0,
                    b.block_num
                ));
            }
        }
    }
    let blocks = r.peers[r.config.peers as usize].ledger.blocks();
    let (verdicts, _) = referee(&blocks[0], blocks.iter().skip(1).flat_map(|b| &b.txs));
    for (id, ok) in verdicts {
        if !ok {
            out.push(format!("{}: {id} committed but invalid in ea order", run.label()));
        }
    }
    out
}

fn replicated_and_monotone(run: &Run) -> Vec<String> {
    let r = &run.r;
    let mut out = Vec::new();
    for (i, p) in r.peers.iter().enumerate() {
        let blocks = p.ledger.blocks();
        let mut version: BTreeMap<&Key, u64> = BTreeMap::new();
        for tx in &blocks[0].txs {
            for k in tx.wset.keys() {
                *version.entry(k).or_default() += 1;
            }
        }
        for b in blocks.iter().skip(1) {
            for tx in b.txs.iter().filter(|t| t.vscc.is_pass() && t.mvcc.is_pass()) {
                for (k, v) in tx.rset.iter() {
                    let cur = version.get(k).copied().unwrap_or(0);
                    if v.0 != cur {
                        out.push(format!(
                            "{}: peer-{i} {} read {k:?} v{} after {cur} writes",
                            run.label(),
                            tx.tx_id,
                            v.0
                        ));
                    }
                }
                for k in tx.wset.keys() {
                    *version.entry(k).or_default() += 1;
                }
            }
        }
        for (k, _, v) in p.ledger.world_state().iter() {
            if version.get(k).copied() != Some(v.0) {
                out.push(format!(
                    "{}: peer-{i} {k:?} at v{} but {:?} writes committed",
                    run.label(),
                    v.0,
                    version.get(k)
                ));
            }
        }
    }
    let d0 = r.peers[0].ledger.world_state().digest();
    let h0 = r.peers[0].ledger.height();
    for p in &r.peers {
        if p.ledger.world_state().digest() != d0 || p.ledger.height() != h0 {
            out.push(format!("{}: peer-{} diverged", run.label(), p.id.0));
        }
    }
    out.extend(
        check_invariants(r)
            .into_iter()
            .filter(|v| matches!(v.check, "versions" | "replication" | "hash-chain"))
            .map(|v| format!("{}: {} {}", run.label(), v.check, v.detail)),
    );
    out
}

fn block_discipline(run: &Run) -> Vec<String> {
    let r = &run.r;
    let mut out = Vec::new();
    for b in r.peers[0].ledger.blocks().iter().skip(1) {
        if b.txs.len() > MAX_BLOCK {
            out.push(format!("{}: block {} holds {}", run.label(), b.block_num, b.txs.len()));
        }
    }
    for s in &r.ordering.block_stats {
        if s.received > MAX_BLOCK || s.included > MAX_BLOCK {
            out.push(format!("{}: batch {} received {}", run.label(), s.block_num, s.received));
        }
        if s.spans_failover {
            continue;
        }
        let wait_us = s.cut_at.0 - s.first_pending.0;
        if wait_us > INTERVAL_MS * 1000 {
            out.push(format!("{}: block {} waited {wait_us} us before cut", run.label(), s.block_num));
        }
        if s.broadcast_at > s.cut_at.max(s.drained_at) {
            out.push(format!("{}: block {} broadcast after its MVCC drain", run.label(), s.block_num));
        }
    }
    out
}

fn peer_resources(run: &Run) -> Vec<String> {
    let r = &run.r;
    let mut out = Vec::new();
    let mvcc: u64 = r.peers.iter().map(|p| p.stats.mvcc_time.0).sum();
    let vscc: u64 = r.peers.iter().map(|p| p.stats.vscc_time.0).sum();
    if r.config.mode != Mode::Og && mvcc != 0 {
        out.push(format!("{}: peers spent {mvcc} us on MVCC", run.label()));
    }
    if r.config.mode == Mode::Ea && vscc != 0 {
        out.push(format!("{}: peers spent {vscc} us on VSCC", run.label()));
    }
    out
}

fn endorse_total(run: &Run) -> u64 {
    run.r.peers.iter().map(|p| p.stats.endorse_time.0).sum()
}

fn throughput_exact(run: &Run) -> Vec<String> {
    let s = &run.s;
    let (start, end) = (s.window_start_ms, s.window_end_ms);
    let counted = run
        .r
        .metrics
        .records()
        .filter(|t| t.status.is_some())
        .filter_map(|t| t.notify)
        .filter(|n| (start..=end).contains(&n.as_ms()))
        .count();
    let mut out = Vec::new();
    if counted != s.throughput.all.count {
        out.push(format!("{}: {} reported, {counted} notifications counted", run.label(), s.throughput.all.count));
    }
    let tps = counted as f64 / ((end - start) / 1000.0);
    if tps != s.throughput.all.per_sec {
        out.push(format!("{}: {} tx/s reported, {tps} expected", run.label(), s.throughput.all.per_sec));
    }
    out.extend(check_throughput(&run.r, s).into_iter().map(|v| format!("{}: {}", run.label(), v.detail)));
    out
}

fn pre_crash_stable(run: &Run) -> Vec<String> {
    let r = &run.r;
    let mut out = Vec::new();
    if r.ordering.stats.failovers == 0 {
        out.push(format!("{}: no failover happened", run.label()));
    }
    if r.ordering.stats.verdict_flips != 0 {
        out.push(format!("{}: {} verdict flips", run.label(), r.ordering.stats.verdict_flips));
    }
    let after: BTreeMap<TxId, bool> = r.ordering.verdicts().into_iter().collect();
    match &r.pre_crash_verdicts {
        None => out.push(format!("{}: crash never fired", run.label())),
        Some(before) => {
            for (id, v) in before {
                if after.get(id) != Some(v) {
                    out.push(format!("{}: {id} verdict {v} changed to {:?}", run.label(), after.get(id)));
                }
            }
        }
    }
    out
}

fn mean_invalid(run: &Run) -> f64 {
    run.s.latency_ms.invalid.as_ref().map_or(f64::NAN, |s| s.mean)
}

fn collect<'a>(runs: impl IntoIterator<Item = &'a Run>, f: fn(&Run) -> Vec<String>) -> Vec<String> {
    runs.into_iter().flat_map(f).collect()
}

// ---------------------------------------------------------------------------

fn main() {
    let mut rep = Report { lines: Vec::new() };

    let og = execute(random_configs(Mode::Og));
    let oemvcc = execute(random_configs(Mode::Oemvcc));
    let ea = execute(random_configs(Mode::Ea));

    let sweep_cfgs: Vec<SimConfig> = Mode::ALL
        .iter()
        .flat_map(|&m| [0.5, 0.8].into_iter().flat_map(move |p| SEEDS.map(|s| base(m, p, s))))
        .collect();
    let sweep = execute(sweep_cfgs);

    let crash_cfgs: Vec<SimConfig> = Mode::ALL
        .iter()
        .flat_map(|&m| SEEDS.map(|s| SimConfig { crash_at_ms: Some(2500.0), ..base(m, 0.8, s) }))
        .collect();
    let crashed = execute(crash_cfgs);

    let everything: Vec<&Run> = og.iter().chain(&oemvcc).chain(&ea).chain(&sweep).chain(&crashed).collect();

    // 1
    let mut p = collect(&og, og_matches_referee);
    let slowest = og.iter().map(|r| r.elapsed).max().unwrap();
    for r in og.iter().filter(|r| r.elapsed > PER_RUN_BUDGET) {
        p.push(format!("{}: took {:?}", r.label(), r.elapsed));
    }
    let txs: usize = og.iter().map(|r| r.r.metrics.len()).min().unwrap();
    rep.record(1, &p, format!("og vs serial referee, {CONFIGS} configs, >= {txs} txs each, slowest {slowest:.2?}"));

    // 2
    let p = collect(og.iter().chain(&oemvcc), replay_equivalent);
    rep.record(2, &p, format!("oemvcc/og replay equivalence, {} configs", og.len() + oemvcc.len()));

    // 3
    let p = collect(&ea, ea_pure);
    let blocks: usize = ea.iter().map(|r| r.r.peers[0].ledger.blocks().len() - 1).sum();
    rep.record(3, &p, format!("ea purity, {CONFIGS} configs, {blocks} blocks"));

    // 4
    let p = collect(everything.iter().copied(), replicated_and_monotone);
    rep.record(4, &p, format!("versions and replication, {} runs", everything.len()));

    // 5
    let p = collect(everything.iter().copied(), block_discipline);
    rep.record(5, &p, format!("block size <= {MAX_BLOCK}, cut within {INTERVAL_MS} ms, {} runs", everything.len()));

    // 6
    let mut p = Vec::new();
    let find = |m: Mode, rate: f64, seed: u64| {
        sweep
            .iter()
            .find(|r| r.r.config.mode == m && r.r.config.workload.conflict_rate == rate && r.r.config.seed == seed)
            .unwrap()
    };
    let mut worst_gap = f64::INFINITY;
    for rate in [0.5, 0.8] {
        for seed in SEEDS {
            let (a, b, c) = (
                mean_invalid(find(Mode::Ea, rate, seed)),
                mean_invalid(find(Mode::Oemvcc, rate, seed)),
                mean_invalid(find(Mode::Og, rate, seed)),
            );
            worst_gap = worst_gap.min(b - a).min(c - b);
            if !(a < b && b < c) {
                p.push(format!("rate {rate} seed {seed}: ea {a:.3} oemvcc {b:.3} og {c:.3}"));
            }
        }
    }
    rep.record(6, &p, format!("invalid latency ea < oemvcc < og, smallest gap {worst_gap:.3} ms"));

    // 7
    let mut p = collect(everything.iter().copied(), peer_resources);
    for seed in SEEDS {
        let (e, o) = (endorse_total(find(Mode::Ea, 0.8, seed)), endorse_total(find(Mode::Oemvcc, 0.8, seed)));
        if e >= o {
            p.push(format!("seed {seed}: ea endorsement time {e} us >= oemvcc {o} us"));
        }
    }
    rep.record(7, &p, "peer MVCC/VSCC time zero where relocated, ea endorses less at 0.8".into());

    // 8
    let p = collect(everything.iter().copied(), throughput_exact);
    rep.record(8, &p, format!("throughput = notifications / window, {} runs", everything.len()));

    // 9
    let mut p = collect(&crashed, pre_crash_stable);
    p.extend(collect(&crashed, replicated_and_monotone));
    p.extend(collect(crashed.iter().filter(|r| r.r.config.mode != Mode::Ea), replay_equivalent));
    p.extend(collect(crashed.iter().filter(|r| r.r.config.mode == Mode::Ea), ea_pure));
    rep.record(9, &p, format!("leader crash at 2500 ms, {} runs", crashed.len()));

    // 10
    let mut p = Vec::new();
    let mut exp = ExperimentConfig::from_text("tx_per_client = 40\nseeds = 1, 2\nconflict_rates = 0.5, 0.8").unwrap();
    exp.trace = true;
    exp.crash_at_ms = Some(1000.0);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run_experiment(&exp, Some(a.path())).unwrap();
    let rb = run_experiment(&exp, Some(b.path())).unwrap();
    for st in [ra.status, rb.status] {
        if st != ExitStatus::Ok {
            p.push(format!("sweep exited {st:?}"));
        }
    }
    let mut names: Vec<_> = fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    for n in &names {
        if fs::read(a.path().join(n)).unwrap() != fs::read(b.path().join(n)).unwrap_or_default() {
            p.push(format!("{n:?} differs"));
        }
    }
    let traces = names.iter().filter(|n| n.to_string_lossy().starts_with("trace_")).count();
    if traces != 12 || !names.iter().any(|n| n == "results.csv") {
        p.push(format!("expected results.csv and 12 traces, found {names:?}"));
    }
    rep.record(10, &p, format!("{} files byte-identical across two invocations", names.len()));

    // 11
    let caps = [Some(0), Some(1), Some(64), None];
    let cap_cfgs: Vec<SimConfig> = [Mode::Oemvcc, Mode::Ea]
        .iter()
        .flat_map(|&m| {
            SEEDS.into_iter().flat_map(move |s| caps.map(|c| SimConfig { cache_capacity: c, ..base(m, 0.8, s) }))
        })
        .collect();
    let capped = execute(cap_cfgs);
    let mut p = Vec::new();
    for group in capped.chunks(caps.len()) {
        let reference = group[0].r.ordering.verdicts();
        for run in &group[1..] {
            if run.r.ordering.verdicts() != reference {
                p.push(format!("{} cache_capacity={:?}: verdicts differ", run.label(), run.r.config.cache_capacity));
            }
        }
    }
    rep.record(11, &p, format!("capacities {{0, 1, 64, unbounded}}, {} runs", capped.len()));

    let failed: Vec<usize> = rep.lines.iter().filter(|l| !l.1).map(|l| l.0).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", rep.lines.len());
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
