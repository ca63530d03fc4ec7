//! Deterministic discrete-event simulator of execute-order-validate ledger
//! transaction flows, with optional MVCC checks at the ordering service and
//! an early-abort variant.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub mod config;
pub mod endorsement;
pub mod experiment;
pub mod gateway;
pub mod harness;
pub mod identity;
pub mod ledger;
pub mod metrics;
pub mod netsim;
pub mod oracle;
pub mod ordering;
pub mod sim;
pub mod validation;
pub mod workload;

pub use gateway::TxStatus;
pub use ledger::{Block, ClientId, Digest, Key, Ledger, PeerId, Transaction, TxId, Version, WorldState};
pub use netsim::SimTime;

/// Protocol variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Baseline: MVCC only at the validating peers.
    Og,
    /// MVCC at the orderer, invalid transactions kept in blocks.
    Oemvcc,
    /// Orderer MVCC plus early abort at endorsement; failures dropped from blocks.
    Ea,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Og, Mode::Oemvcc, Mode::Ea];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Og => "og",
            Mode::Oemvcc => "oemvcc",
            Mode::Ea => "ea",
        }
    }

    /// Whether the ordering service runs MVCC checks.
    pub fn orderer_mvcc(self) -> bool {
        self != Mode::Og
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown mode {0:?} (expected og, oemvcc or ea)")]
pub struct ParseModeError(pub String);

impl FromStr for Mode {
    type Err = ParseModeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "og" => Ok(Mode::Og),
            "oemvcc" => Ok(Mode::Oemvcc),
            "ea" => Ok(Mode::Ea),
            other => Err(ParseModeError(other.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_round_trip() {
        for m in Mode::ALL {
            assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{m}\""));
        }
        assert!("fabric".parse::<Mode>().is_err());
    }
}
