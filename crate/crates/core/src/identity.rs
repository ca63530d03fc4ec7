//! Simulated identities and signature tags.
//!
//! Stands in for a PKI: every principal gets a secret derived from the run
//! seed, and a tag is a keyed digest of the signed bytes. Anyone holding the
//! registry can verify; a forger without the secret produces a tag that
//! fails verification with overwhelming probability.

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SigTag(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Principal {
    Client(u32),
    Peer(u32),
}

#[derive(Clone, Copy, Debug)]
pub struct Identity {
    secret: u64,
}

impl Identity {
    pub fn sign(&self, payload: &[u8]) -> SigTag {
        keyed_tag(self.secret, payload)
    }

    pub fn verify(&self, payload: &[u8], tag: SigTag) -> bool {
        self.sign(payload) == tag
    }
}

fn keyed_tag(secret: u64, payload: &[u8]) -> SigTag {
    let mut h = Sha256::new();
    h.update(secret.to_be_bytes());
    h.update(payload);
    let out = h.finalize();
    let mut first = [0u8; 8];
    first.copy_from_slice(&out[..8]);
    SigTag(u64::from_be_bytes(first))
}

/// Membership service stand-in: maps principals to identities.
#[derive(Clone, Debug)]
pub struct IdentityRegistry {
    root: u64,
}

impl IdentityRegistry {
    pub fn new(seed: u64) -> Self {
        IdentityRegistry { root: seed }
    }

    pub fn identity(&self, who: Principal) -> Identity {
        let (kind, id) = match who {
            Principal::Client(i) => (b'c', i),
            Principal::Peer(i) => (b'p', i),
        };
        let mut buf = Vec::with_capacity(14);
        buf.extend_from_slice(b"id");
        buf.push(kind);
        buf.extend_from_slice(&id.to_be_bytes());
        Identity { secret: keyed_tag(self.root, &buf).0 }
    }

    pub fn verify(&self, who: Principal, payload: &[u8], tag: SigTag) -> bool {
        self.identity(who).verify(payload, tag)
    }
}
