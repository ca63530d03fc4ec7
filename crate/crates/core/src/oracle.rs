//! Serial referee for MVCC verdicts.
//!
//! Walks a totally ordered transaction list against its own copy of the
//! state: a transaction is valid iff every version it read equals the
//! version currently held, and a valid transaction advances each written
//! key by one. Deliberately shares no code with the ledger or the
//! validators it referees, apart from the canonical state digest.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ledger::{Digest, DumpRecord, Key, Transaction, TxId, Value, Version, WorldState, WriteSet};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleVerdict {
    /// Validity of each transaction, in the given order.
    pub verdicts: Vec<(TxId, bool)>,
    pub state_digest: Digest,
    pub versions: BTreeMap<Key, Version>,
}

impl OracleVerdict {
    pub fn valid_count(&self) -> usize {
        self.verdicts.iter().filter(|(_, v)| *v).count()
    }
}

pub fn serial_oracle(genesis: &WorldState, ordered: &[Transaction]) -> OracleVerdict {
    let mut state: BTreeMap<Key, (Value, u64)> =
        genesis.iter().map(|(k, v, ver)| (k.clone(), (v.clone(), ver.0))).collect();
    let mut verdicts = Vec::with_capacity(ordered.len());
    for tx in ordered {
        let valid = tx.rset.iter().all(|(k, read)| state.get(k).map_or(0, |(_, v)| *v) == read.0);
        if valid {
            for (k, value) in tx.wset.iter() {
                let slot = state.entry(k.clone()).or_insert_with(|| (Vec::new(), 0));
                slot.0 = value.clone();
                slot.1 += 1;
            }
        }
        verdicts.push((tx.tx_id, valid));
    }
    let versions = state.iter().map(|(k, (_, v))| (k.clone(), Version(*v))).collect();
    // rebuild through the public surface only to reuse the canonical digest encoding
    let mut rebuilt = WorldState::new();
    for (k, (value, ver)) in &state {
        let w: WriteSet = std::iter::once((k.clone(), value.clone())).collect();
        for _ in 0..*ver {
            rebuilt.apply_write_set(&w);
        }
    }
    OracleVerdict { verdicts, state_digest: rebuilt.digest(), versions }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mismatch {
    pub position: usize,
    pub tx_id: TxId,
    pub expected: Option<bool>,
    pub actual: Option<bool>,
}

/// Position-by-position comparison of two verdict lists.
pub fn diff_verdicts(expected: &[(TxId, bool)], actual: &[(TxId, bool)]) -> Vec<Mismatch> {
    let n = expected.len().max(actual.len());
    (0..n)
        .filter_map(|i| {
            let e = expected.get(i);
            let a = actual.get(i);
            match (e, a) {
                (Some(e), Some(a)) if e == a => None,
                _ => Some(Mismatch {
                    position: i,
                    tx_id: e.or(a).map(|(t, _)| *t).expect("one side present"),
                    expected: e.map(|(_, v)| *v),
                    actual: a.map(|(_, v)| *v),
                }),
            }
        })
        .collect()
}

/// Re-referees a ledger dump. Transactions that failed VSCC are skipped;
/// every other transaction's recorded commit decision must match the
/// serial verdict. Block 0 is taken as genesis. Returns one message per
/// disagreement.
pub fn referee_dump(records: &[DumpRecord]) -> Vec<String> {
    let mut versions: BTreeMap<&Key, u64> = BTreeMap::new();
    let mut problems = Vec::new();
    for rec in records {
        for tx in &rec.txs {
            if rec.block_num == 0 {
                for k in &tx.wset_keys {
                    *versions.entry(k).or_insert(0) += 1;
                }
                continue;
            }
            if tx.vscc.is_fail() {
                continue;
            }
            let valid = tx.rset.iter().all(|(k, read)| versions.get(k).copied().unwrap_or(0) == read.0);
            if valid != tx.committed() {
                problems.push(format!(
                    "block {} {}: recorded {}, serial verdict {}",
                    rec.block_num,
                    tx.tx_id,
                    if tx.committed() { "committed" } else { "invalid" },
                    if valid { "valid" } else { "invalid" }
                ));
            }
            if tx.committed() {
                for k in &tx.wset_keys {
                    *versions.entry(k).or_insert(0) += 1;
                }
            }
        }
    }
    problems
}
