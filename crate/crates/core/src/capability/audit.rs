//! Tamper-evident audit chain.
//!
//! Each record's `chain` value hashes the previous chain value (hex chars as
//! ASCII) followed by the record's canonical bytes. The first record chains
//! from 64 zero hex characters. The algorithm is selectable per segment;
//! verification infers it from the digest length, so a chain may switch
//! algorithm mid-stream and still verify end to end.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256, Sha512};
use thiserror::Error;

/// Genesis predecessor: 64 zero hex chars.
pub const GENESIS: &str = "0000000000000000000000000000000000000000000000000000000000000000";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HashAlg {
    Sha256,
    Sha512,
}

impl HashAlg {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "sha-256" => Some(HashAlg::Sha256),
            "sha-512" => Some(HashAlg::Sha512),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            HashAlg::Sha256 => "sha-256",
            HashAlg::Sha512 => "sha-512",
        }
    }

    pub fn digest_hex(&self, input: &[u8]) -> String {
        match self {
            HashAlg::Sha256 => hex(&Sha256::digest(input)),
            HashAlg::Sha512 => hex(&Sha512::digest(input)),
        }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub profile_id: String,
    pub seq: u64,
    pub timestamp: String,
    pub instance_id: String,
    pub action: String,
    pub outcome: String,
    pub detail: String,
    pub chain: String,
}

impl AuditRecord {
    /// Canonical form: JSON with sorted keys (chain excluded) plus newline.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let value = serde_json::json!({
            "action": self.action,
            "detail": self.detail,
            "instance_id": self.instance_id,
            "outcome": self.outcome,
            "profile_id": self.profile_id,
            "seq": self.seq,
            "timestamp": self.timestamp,
        });
        let mut bytes = serde_json::to_vec(&value).expect("record serializes");
        bytes.push(b'\n');
        bytes
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChainError {
    #[error("chain mismatch at seq {seq}")]
    Mismatch { seq: u64 },
    #[error("unrecognized digest length at seq {seq}")]
    UnknownAlgorithm { seq: u64 },
    #[error("non-contiguous sequence at seq {seq}")]
    SequenceGap { seq: u64 },
}

/// Append-only audit chain for one profile.
#[derive(Debug, Clone)]
pub struct AuditChain {
    alg: HashAlg,
    records: Vec<AuditRecord>,
}

impl AuditChain {
    pub fn new(alg: HashAlg) -> Self {
        Self {
            alg,
            records: Vec::new(),
        }
    }

    pub fn algorithm(&self) -> HashAlg {
        self.alg
    }

    /// Switch the algorithm for records appended from now on. Existing
    /// records keep their digests.
    pub fn set_algorithm(&mut self, alg: HashAlg) {
        self.alg = alg;
    }

    pub fn next_seq(&self) -> u64 {
        self.records.len() as u64
    }

    pub fn append(
        &mut self,
        profile_id: &str,
        timestamp: &str,
        instance_id: &str,
        action: &str,
        outcome: &str,
        detail: &str,
    ) -> &AuditRecord {
        let mut record = AuditRecord {
            profile_id: profile_id.to_string(),
            seq: self.next_seq(),
            timestamp: timestamp.to_string(),
            instance_id: instance_id.to_string(),
            action: action.to_string(),
            outcome: outcome.to_string(),
            detail: detail.to_string(),
            chain: String::new(),
        };
        let prev = self
            .records
            .last()
            .map(|r| r.chain.as_str())
            .unwrap_or(GENESIS);
        let mut input = prev.as_bytes().to_vec();
        input.extend_from_slice(&record.canonical_bytes());
        record.chain = self.alg.digest_hex(&input);
        self.records.push(record);
        self.records.last().expect("just pushed")
    }

    pub fn records(&self) -> &[AuditRecord] {
        &self.records
    }
}

/// Recompute and verify a chain prefix. The hash algorithm of each record is
/// inferred from its stored digest length (64 hex chars for sha-256, 128 for
/// sha-512).
pub fn verify_chain(records: &[AuditRecord]) -> Result<(), ChainError> {
    let mut prev = GENESIS.to_string();
    for (i, record) in records.iter().enumerate() {
        if record.seq != i as u64 {
            return Err(ChainError::SequenceGap { seq: record.seq });
        }
        let alg = match record.chain.len() {
            64 => HashAlg::Sha256,
            128 => HashAlg::Sha512,
            _ => return Err(ChainError::UnknownAlgorithm { seq: record.seq }),
        };
        let mut input = prev.as_bytes().to_vec();
        input.extend_from_slice(&record.canonical_bytes());
        if alg.digest_hex(&input) != record.chain {
            return Err(ChainError::Mismatch { seq: record.seq });
        }
        prev = record.chain.clone();
    }
    Ok(())
}
