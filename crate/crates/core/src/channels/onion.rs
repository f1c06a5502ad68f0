//! Per-hop sealed forwarding records.
//!
//! Each record is addressed by a tag only its hop can recompute and is
//! encrypted under a keystream derived from that hop's key. Records are
//! stored in tag order, so a record's position says nothing about the hop's
//! place on the path.

use serde::{Deserialize, Serialize};

use crate::hash::{domain, Hash256, Secret};
use crate::types::{AccountId, Amount};

use super::ChannelError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HopView {
    pub pred: AccountId,
    /// `None` at the payee.
    pub succ: Option<AccountId>,
    pub amount_to_forward: Amount,
    pub expiry: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SealedRecord {
    pub tag: Hash256,
    pub ciphertext: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OnionPacket {
    pub nonce: Hash256,
    pub records: Vec<SealedRecord>,
}

fn tag(key: &Secret, nonce: &Hash256) -> Hash256 {
    Hash256::tagged(domain::ONION, &[b"tag", key, &nonce.0])
}

fn keystream(key: &Secret, nonce: &Hash256, len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(len);
    let mut counter = 0u64;
    while out.len() < len {
        let block = Hash256::tagged(domain::ONION, &[b"stream", key, &nonce.0, &counter.to_le_bytes()]);
        out.extend_from_slice(&block.0);
        counter += 1;
    }
    out.truncate(len);
    out
}

fn xor(data: &[u8], stream: &[u8]) -> Vec<u8> {
    data.iter().zip(stream).map(|(d, k)| d ^ k).collect()
}

/// One entry per hop after the sender: `(hop key, what that hop may learn)`.
pub fn seal(nonce: Hash256, hops: &[(Secret, HopView)]) -> OnionPacket {
    let mut records: Vec<SealedRecord> = hops
        .iter()
        .map(|(key, view)| {
            let plain = serde_json::to_vec(view).expect("hop view serializes");
            SealedRecord { tag: tag(key, &nonce), ciphertext: xor(&plain, &keystream(key, &nonce, plain.len())) }
        })
        .collect();
    records.sort_by_key(|a| a.tag);
    OnionPacket { nonce, records }
}

/// Opens the record addressed to the holder of `key`.
pub fn open(packet: &OnionPacket, key: &Secret) -> Result<HopView, ChannelError> {
    let t = tag(key, &packet.nonce);
    let record = packet.records.iter().find(|r| r.tag == t).ok_or(ChannelError::NotAHop)?;
    let plain = xor(&record.ciphertext, &keystream(key, &packet.nonce, record.ciphertext.len()));
    serde_json::from_slice(&plain).map_err(|_| ChannelError::NotAHop)
}
