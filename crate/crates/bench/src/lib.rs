//! Fixtures shared by the benchmarks.

use eovsim_core::ledger::{Check, ClientId, Key, Transaction, TxId, Version, WriteSet};
use eovsim_core::sim::SimConfig;
use eovsim_core::Mode;

pub fn sim_config(mode: Mode, conflict_rate: f64, tx_per_client: u32) -> SimConfig {
    let mut c = SimConfig { mode, seed: 1, ..SimConfig::default() };
    c.workload.conflict_rate = conflict_rate;
    c.workload.tx_per_client = tx_per_client;
    c
}

/// `n` single-key transactions over `keys` keys, each reading a version
/// that is current about half of the time.
pub fn synthetic_txs(n: usize, keys: usize) -> Vec<Transaction> {
    let mut versions = vec![1u64; keys];
    (0..n)
        .map(|i| {
            let k = (i * 7 + i / 3) % keys;
            let read = if i % 2 == 0 { versions[k] } else { versions[k].saturating_sub(1).max(1) };
            if read == versions[k] {
                versions[k] += 1;
            }
            let key = Key::from(format!("k{k}").as_str());
            let mut t = Transaction::genesis(WriteSet::new());
            t.tx_id = TxId(i as u64 + 1);
            t.client = ClientId(0);
            t.rset = std::iter::once((key.clone(), Version(read))).collect();
            t.wset = std::iter::once((key, b"v".to_vec())).collect();
            t.vscc = Check::Unchecked;
            t.mvcc = Check::Unchecked;
            t
        })
        .collect()
}
