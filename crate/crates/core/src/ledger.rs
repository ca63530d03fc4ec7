//! Versioned ledger shared by every node role.
//!
//! A peer's ledger has three parts: the world state (key -> value, version),
//! the append-only block chain, and the log history that records the
//! validity of every transaction in every committed block. Versions start at
//! [`Version::INITIAL`] for a key that was never written and grow by exactly
//! one per committed write.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::identity::SigTag;
use crate::workload::Proposal;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LedgerError {
    #[error("block {block_num}: prev_hash does not match chain tail")]
    HashChainMismatch { block_num: u64 },
    #[error("block {block_num}: stored hash does not match its contents")]
    CorruptBlock { block_num: u64 },
    #[error("expected block {expected}, got {got}")]
    SequenceGap { expected: u64, got: u64 },
    #[error("validity flag already settled to {current:?}")]
    FlagAlreadySettled { current: Check },
}

/// Identifier of an asset in the world state.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Key(String);

impl Key {
    /// Panics on an empty name.
    pub fn new(name: impl Into<String>) -> Self {
        let name = name.into();
        assert!(!name.is_empty(), "asset key must be non-empty");
        Key(name)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Key {
    fn from(s: &str) -> Self {
        Key::new(s)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Version(pub u64);

impl Version {
    /// Version reported for a key that has never been committed.
    pub const INITIAL: Version = Version(0);

    pub fn next(self) -> Version {
        Version(self.0 + 1)
    }
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

/// Opaque asset payload.
pub type Value = Vec<u8>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TxId(pub u64);

impl fmt::Display for TxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "tx-{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClientId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PeerId(pub u32);

impl fmt::Display for PeerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "peer-{}", self.0)
    }
}

/// Keys read during simulation together with the versions observed.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReadSet(BTreeMap<Key, Version>);

impl ReadSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: Key, version: Version) {
        self.0.insert(key, version);
    }

    pub fn get(&self, key: &Key) -> Option<Version> {
        self.0.get(key).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Key, Version)> {
        self.0.iter().map(|(k, v)| (k, *v))
    }

    pub fn keys(&self) -> impl Iterator<Item = &Key> {
        self.0.keys()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FromIterator<(Key, Version)> for ReadSet {
    fn from_iter<I: IntoIterator<Item = (Key, Version)>>(iter: I) -> Self {
        ReadSet(iter.into_iter().collect())
    }
}

/// Keys a transaction will modify, with their new values.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WriteSet(BTreeMap<Key, Value>);

impl WriteSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: Key, value: Value) {
        self.0.insert(key, value);
    }

    pub fn get(&self, key: &Key) -> Option<&Value> {
        self.0.get(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Key, &Value)> {
        self.0.iter()
    }

    pub fn keys(&self) -> impl Iterator<Item = &Key> {
        self.0.keys()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FromIterator<(Key, Value)> for WriteSet {
    fn from_iter<I: IntoIterator<Item = (Key, Value)>>(iter: I) -> Self {
        WriteSet(iter.into_iter().collect())
    }
}

/// Tri-state validity marker. Moves from `Unchecked` to a verdict once.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Check {
    #[default]
    Unchecked,
    Pass,
    Fail,
}

impl Check {
    pub fn from_pass(pass: bool) -> Check {
        if pass {
            Check::Pass
        } else {
            Check::Fail
        }
    }

    /// Settles the flag. Re-settling to the same verdict is a no-op; a flip is an error.
    pub fn settle(&mut self, pass: bool) -> Result<(), LedgerError> {
        let verdict = Check::from_pass(pass);
        match *self {
            Check::Unchecked => {
                *self = verdict;
                Ok(())
            }
            current if current == verdict => Ok(()),
            current => Err(LedgerError::FlagAlreadySettled { current }),
        }
    }

    pub fn is_pass(self) -> bool {
        self == Check::Pass
    }

    pub fn is_fail(self) -> bool {
        self == Check::Fail
    }

    fn byte(self) -> u8 {
        match self {
            Check::Unchecked => 0,
            Check::Pass => 1,
            Check::Fail => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndorsementTag {
    pub peer: PeerId,
    pub tag: SigTag,
}

/// A transaction from endorsed envelope to committed ledger entry.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub tx_id: TxId,
    pub client: ClientId,
    /// Index of the gateway that relayed the envelope.
    pub gateway: u32,
    /// `None` only for the genesis transaction.
    pub proposal: Option<Proposal>,
    pub rset: ReadSet,
    pub wset: WriteSet,
    pub endorsements: Vec<EndorsementTag>,
    pub client_sig: Option<SigTag>,
    pub vscc: Check,
    pub mvcc: Check,
}

impl Transaction {
    /// The system transaction that seeds every asset in block 0.
    pub fn genesis(wset: WriteSet) -> Transaction {
        Transaction {
            tx_id: TxId(0),
            client: ClientId(u32::MAX),
            gateway: 0,
            proposal: None,
            rset: ReadSet::new(),
            wset,
            endorsements: Vec::new(),
            client_sig: None,
            vscc: Check::Pass,
            mvcc: Check::Pass,
        }
    }

    /// Bytes covered by an endorsing peer's signature.
    pub fn endorsement_payload(&self) -> Vec<u8> {
        endorsement_payload(self.tx_id, &self.rset, &self.wset)
    }

    /// Bytes covered by the client's envelope signature.
    pub fn envelope_payload(&self) -> Vec<u8> {
        let mut buf = self.endorsement_payload();
        for e in &self.endorsements {
            buf.extend_from_slice(&e.peer.0.to_be_bytes());
            buf.extend_from_slice(&e.tag.0.to_be_bytes());
        }
        buf
    }

    pub fn is_committable(&self) -> bool {
        self.vscc.is_pass() && self.mvcc.is_pass()
    }

    /// Union of read and write keys, in key order.
    pub fn keys(&self) -> Vec<Key> {
        let mut keys: Vec<Key> = self.rset.keys().chain(self.wset.keys()).cloned().collect();
        keys.sort();
        keys.dedup();
        keys
    }
}

pub fn endorsement_payload(tx_id: TxId, rset: &ReadSet, wset: &WriteSet) -> Vec<u8> {
    let mut buf = Vec::with_capacity(64);
    buf.extend_from_slice(b"endorse");
    buf.extend_from_slice(&tx_id.0.to_be_bytes());
    for (k, v) in rset.iter() {
        push_str(&mut buf, k.as_str());
        buf.extend_from_slice(&v.0.to_be_bytes());
    }
    buf.push(0xff);
    for (k, v) in wset.iter() {
        push_str(&mut buf, k.as_str());
        buf.extend_from_slice(&(v.len() as u64).to_be_bytes());
        buf.extend_from_slice(v);
    }
    buf
}

fn push_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u64).to_be_bytes());
    buf.extend_from_slice(s.as_bytes());
}

/// 32-byte content digest.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0; 32]);

    pub fn of(bytes: &[u8]) -> Digest {
        let out = Sha256::digest(bytes);
        let mut d = [0u8; 32];
        d.copy_from_slice(&out);
        Digest(d)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Digest> {
        let bytes = hex::decode(s).ok()?;
        let arr: [u8; 32] = bytes.try_into().ok()?;
        Some(Digest(arr))
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", &self.to_hex()[..12])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest::from_hex(&s).ok_or_else(|| serde::de::Error::custom("expected 64 hex chars"))
    }
}

/// Canonical block digest over (block_num, prev_hash, ordered tx ids, validity flags).
pub fn block_digest(block_num: u64, prev_hash: &Digest, entries: &[(TxId, Check)]) -> Digest {
    let mut buf = Vec::with_capacity(48 + entries.len() * 9);
    buf.extend_from_slice(b"block");
    buf.extend_from_slice(&block_num.to_be_bytes());
    buf.extend_from_slice(&prev_hash.0);
    for (id, flag) in entries {
        buf.extend_from_slice(&id.0.to_be_bytes());
        buf.push(flag.byte());
    }
    Digest::of(&buf)
}

/// An ordered batch of transactions, hash-linked to its predecessor.
///
/// `flags` are the MVCC markers the ordering service placed in the block
/// metadata; they are part of the hash. The `vscc`/`mvcc` fields of each
/// transaction are the local verdicts of whichever node holds the block.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub block_num: u64,
    pub txs: Vec<Transaction>,
    pub flags: Vec<Check>,
    pub prev_hash: Digest,
    pub this_hash: Digest,
}

impl Block {
    /// Builds a block, taking its metadata flags from each transaction's current `mvcc`.
    pub fn seal(block_num: u64, prev_hash: Digest, txs: Vec<Transaction>) -> Block {
        let flags: Vec<Check> = txs.iter().map(|t| t.mvcc).collect();
        let this_hash = block_digest(block_num, &prev_hash, &Self::entries(&txs, &flags));
        Block { block_num, txs, flags, prev_hash, this_hash }
    }

    pub fn genesis(wset: WriteSet) -> Block {
        Block::seal(0, Digest::ZERO, vec![Transaction::genesis(wset)])
    }

    fn entries(txs: &[Transaction], flags: &[Check]) -> Vec<(TxId, Check)> {
        txs.iter().map(|t| t.tx_id).zip(flags.iter().copied()).collect()
    }

    pub fn recompute_hash(&self) -> Digest {
        block_digest(self.block_num, &self.prev_hash, &Self::entries(&self.txs, &self.flags))
    }

    pub fn len(&self) -> usize {
        self.txs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.txs.is_empty()
    }
}

/// Current key -> (value, version) view.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WorldState {
    store: BTreeMap<Key, (Value, Version)>,
}

impl WorldState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn read_key(&self, key: &Key) -> Option<(&Value, Version)> {
        self.store.get(key).map(|(v, ver)| (v, *ver))
    }

    /// Current version, or [`Version::INITIAL`] for a never-written key.
    pub fn version_of(&self, key: &Key) -> Version {
        self.store.get(key).map_or(Version::INITIAL, |(_, v)| *v)
    }

    /// Replaces each written value and bumps its version by one.
    pub fn apply_write_set(&mut self, wset: &WriteSet) {
        for (key, value) in wset.iter() {
            let entry = self.store.entry(key.clone()).or_insert_with(|| (Vec::new(), Version::INITIAL));
            entry.0 = value.clone();
            entry.1 = entry.1.next();
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Key, &Value, Version)> {
        self.store.iter().map(|(k, (v, ver))| (k, v, *ver))
    }

    pub fn len(&self) -> usize {
        self.store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.store.is_empty()
    }

    pub fn digest(&self) -> Digest {
        let mut buf = Vec::with_capacity(self.store.len() * 32);
        buf.extend_from_slice(b"state");
        for (k, (v, ver)) in &self.store {
            push_str(&mut buf, k.as_str());
            buf.extend_from_slice(&ver.0.to_be_bytes());
            buf.extend_from_slice(&(v.len() as u64).to_be_bytes());
            buf.extend_from_slice(v);
        }
        Digest::of(&buf)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    pub block_num: u64,
    pub tx_id: TxId,
    pub vscc: Check,
    pub mvcc: Check,
}

impl LogRecord {
    pub fn committed(&self) -> bool {
        self.vscc.is_pass() && self.mvcc.is_pass()
    }
}

#[derive(Clone, Debug, Default)]
pub struct Ledger {
    world_state: WorldState,
    blockchain: Vec<Block>,
    log_history: Vec<LogRecord>,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn world_state(&self) -> &WorldState {
        &self.world_state
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blockchain
    }

    pub fn log_history(&self) -> &[LogRecord] {
        &self.log_history
    }

    pub fn height(&self) -> u64 {
        self.blockchain.len() as u64
    }

    pub fn tail_hash(&self) -> Digest {
        self.blockchain.last().map_or(Digest::ZERO, |b| b.this_hash)
    }

    /// Appends a block whose transactions already carry their local verdicts
    /// and commits the write sets of the valid ones in block order.
    /// Returns the number of committed transactions.
    pub fn append_block(&mut self, block: Block) -> Result<usize, LedgerError> {
        let expected = self.height();
        if block.block_num != expected {
            return Err(LedgerError::SequenceGap { expected, got: block.block_num });
        }
        if block.prev_hash != self.tail_hash() {
            return Err(LedgerError::HashChainMismatch { block_num: block.block_num });
        }
        if block.recompute_hash() != block.this_hash {
            return Err(LedgerError::CorruptBlock { block_num: block.block_num });
        }
        let mut committed = 0;
        for tx in &block.txs {
            if tx.is_committable() {
                self.world_state.apply_write_set(&tx.wset);
                committed += 1;
            }
            self.log_history.push(LogRecord {
                block_num: block.block_num,
                tx_id: tx.tx_id,
                vscc: tx.vscc,
                mvcc: tx.mvcc,
            });
        }
        self.blockchain.push(block);
        Ok(committed)
    }

    /// Re-digests every stored block and checks the links.
    pub fn verify_chain(&self) -> Result<(), LedgerError> {
        let mut prev = Digest::ZERO;
        for (i, b) in self.blockchain.iter().enumerate() {
            if b.block_num != i as u64 {
                return Err(LedgerError::SequenceGap { expected: i as u64, got: b.block_num });
            }
            if b.prev_hash != prev {
                return Err(LedgerError::HashChainMismatch { block_num: b.block_num });
            }
            if b.recompute_hash() != b.this_hash {
                return Err(LedgerError::CorruptBlock { block_num: b.block_num });
            }
            prev = b.this_hash;
        }
        Ok(())
    }

    /// Rebuilds the ledger from scratch out of the stored blocks.
    pub fn replay(&self) -> Result<Ledger, LedgerError> {
        let mut fresh = Ledger::new();
        for b in &self.blockchain {
            fresh.append_block(b.clone())?;
        }
        Ok(fresh)
    }

    /// Checks that every committed write to a key moved it forward by exactly
    /// one version from the version its transaction read. Returns one
    /// message per violation.
    pub fn audit_versions(&self) -> Vec<String> {
        let mut violations = Vec::new();
        let mut writes: BTreeMap<&Key, u64> = BTreeMap::new();
        for b in &self.blockchain {
            for tx in b.txs.iter().filter(|t| t.is_committable()) {
                for key in tx.wset.keys() {
                    let prior = writes.entry(key).or_insert(0);
                    if let Some(read) = tx.rset.get(key) {
                        if read.0 != *prior {
                            violations.push(format!(
                                "block {} {}: committed write to {} read {} but {} writes preceded it",
                                b.block_num, tx.tx_id, key, read, prior
                            ));
                        }
                    }
                    *prior += 1;
                }
            }
        }
        for (key, count) in writes {
            let current = self.world_state.version_of(key);
            if current.0 != count {
                violations.push(format!("{key}: world state at {current} after {count} committed writes"));
            }
        }
        violations
    }

    /// Full invariant suite: hash chain, replay determinism, version monotonicity.
    pub fn audit(&self) -> Vec<String> {
        let mut violations = Vec::new();
        if let Err(e) = self.verify_chain() {
            violations.push(format!("hash chain: {e}"));
        }
        match self.replay() {
            Ok(fresh) if fresh.world_state.digest() != self.world_state.digest() => {
                violations.push("replay produced a different world state".to_string())
            }
            Ok(_) => {}
            Err(e) => violations.push(format!("replay failed: {e}")),
        }
        violations.extend(self.audit_versions());
        violations
    }

    pub fn dump_records(&self) -> Vec<DumpRecord> {
        self.blockchain.iter().map(DumpRecord::from_block).collect()
    }

    /// Writes one JSON line per committed block.
    pub fn dump_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for rec in self.dump_records() {
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// One line of a ledger dump.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DumpRecord {
    pub block_num: u64,
    pub prev_hash: Digest,
    pub this_hash: Digest,
    pub txs: Vec<DumpTx>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DumpTx {
    pub tx_id: TxId,
    pub vscc: Check,
    pub mvcc: Check,
    pub wset_keys: Vec<Key>,
    /// MVCC marker carried in the block metadata (hashed).
    #[serde(default)]
    pub flag: Check,
    #[serde(default)]
    pub rset: ReadSet,
}

impl DumpTx {
    pub fn committed(&self) -> bool {
        self.vscc.is_pass() && self.mvcc.is_pass()
    }
}

impl DumpRecord {
    pub fn from_block(b: &Block) -> DumpRecord {
        DumpRecord {
            block_num: b.block_num,
            prev_hash: b.prev_hash,
            this_hash: b.this_hash,
            txs: b
                .txs
                .iter()
                .zip(&b.flags)
                .map(|(t, f)| DumpTx {
                    tx_id: t.tx_id,
                    vscc: t.vscc,
                    mvcc: t.mvcc,
                    wset_keys: t.wset.keys().cloned().collect(),
                    flag: *f,
                    rset: t.rset.clone(),
                })
                .collect(),
        }
    }

    pub fn recompute_hash(&self) -> Digest {
        let entries: Vec<(TxId, Check)> = self.txs.iter().map(|t| (t.tx_id, t.flag)).collect();
        block_digest(self.block_num, &self.prev_hash, &entries)
    }
}

pub fn read_dump<R: BufRead>(input: R) -> Result<Vec<DumpRecord>, DumpError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| DumpError::Parse { line: i + 1, source: e })?;
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Error)]
pub enum DumpError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
}

/// Invariant checks that need only a dump: hash links and version
/// monotonicity of committed writes.
pub fn verify_dump(records: &[DumpRecord]) -> Vec<String> {
    let mut violations = Vec::new();
    let mut prev = Digest::ZERO;
    let mut writes: BTreeMap<&Key, u64> = BTreeMap::new();
    for (i, rec) in records.iter().enumerate() {
        if rec.block_num != i as u64 {
            violations.push(format!("block {}: expected number {i}", rec.block_num));
        }
        if rec.prev_hash != prev {
            violations.push(format!("block {}: prev_hash does not match chain tail", rec.block_num));
        }
        if rec.recompute_hash() != rec.this_hash {
            violations.push(format!("block {}: this_hash does not match contents", rec.block_num));
        }
        prev = rec.this_hash;
        for tx in rec.txs.iter().filter(|t| t.committed()) {
            for key in &tx.wset_keys {
                let prior = writes.entry(key).or_insert(0);
                if let Some(read) = tx.rset.get(key) {
                    if read.0 != *prior {
                        violations.push(format!(
                            "block {} {}: committed write to {} read {} after {} writes",
                            rec.block_num, tx.tx_id, key, read, prior
                        ));
                    }
                }
                *prior += 1;
            }
        }
    }
    violations
}
