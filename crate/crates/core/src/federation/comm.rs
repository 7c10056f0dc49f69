use serde::{Deserialize, Serialize};

use crate::losses::TransferMode;

/// Bytes moved in one round. Reals are counted at 8 bytes; no compression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RoundComm {
    pub round: usize,
    pub uplink_bytes: u64,
    pub downlink_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CommLedger {
    pub rounds: Vec<RoundComm>,
}

impl CommLedger {
    pub fn push(&mut self, entry: RoundComm) {
        self.rounds.push(entry);
    }

    pub fn total_uplink(&self) -> u64 {
        self.rounds.iter().map(|r| r.uplink_bytes).sum()
    }

    pub fn total_downlink(&self) -> u64 {
        self.rounds.iter().map(|r| r.downlink_bytes).sum()
    }
}

/// `participants * |D_r| * (C*[outcomes] + E*[embeddings]) * 8`.
pub fn knowledge_bytes(participants: usize, proxy_len: usize, classes: usize, embed_width: usize, mode: TransferMode) -> u64 {
    let per_row = classes * usize::from(mode.uses_outcomes()) + embed_width * usize::from(mode.uses_embeddings());
    (participants * proxy_len * per_row * 8) as u64
}

/// `participants * param_count * 8`.
pub fn parameter_bytes(participants: usize, param_count: usize) -> u64 {
    (participants * param_count * 8) as u64
}
