use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use eovsim_bench::{sim_config, synthetic_txs};
use eovsim_core::ordering::{orderer_mvcc, VersionCache};
use eovsim_core::sim::simulate;
use eovsim_core::Mode;
use std::hint::black_box;

fn whole_run(c: &mut Criterion) {
    let mut g = c.benchmark_group("simulate");
    g.sample_size(10);
    g.throughput(Throughput::Elements(1000));
    for mode in Mode::ALL {
        g.bench_with_input(BenchmarkId::from_parameter(mode), &mode, |b, &m| {
            b.iter(|| simulate(black_box(sim_config(m, 0.5, 100))).unwrap())
        });
    }
    g.finish();
}

fn mvcc(c: &mut Criterion) {
    let txs = synthetic_txs(10_000, 64);
    let mut g = c.benchmark_group("orderer_mvcc");
    g.throughput(Throughput::Elements(txs.len() as u64));
    for cap in [Some(8), None] {
        let name = cap.map_or("unbounded".to_string(), |n| n.to_string());
        g.bench_function(BenchmarkId::new("capacity", name), |b| {
            b.iter(|| {
                let mut cache = VersionCache::new(cap);
                txs.iter().filter(|t| orderer_mvcc(t, &mut cache, false).pass).count()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, whole_run, mvcc);
criterion_main!(benches);
