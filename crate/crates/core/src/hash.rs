//! 256-bit hashing with domain separation.
//!
//! Every hash in the simulator is SHA-256 over a one-byte domain tag followed by
//! the payload. Leaves and interior merkle nodes use distinct tags so that an
//! interior node can never be reinterpreted as a leaf.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

/// Domain tags. Values are part of the on-disk format of event logs.
pub mod domain {
    pub const LEAF: u8 = 0x00;
    pub const NODE: u8 = 0x01;
    pub const TX: u8 = 0x02;
    pub const BLOCK: u8 = 0x03;
    pub const SECRET: u8 = 0x04;
    pub const SIGNATURE: u8 = 0x05;
    pub const ATTESTATION: u8 = 0x06;
    pub const ONION: u8 = 0x07;
    pub const EMPTY: u8 = 0x08;
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Hash256(pub [u8; 32]);

impl Hash256 {
    pub const ZERO: Hash256 = Hash256([0u8; 32]);

    /// Hash of `tag ‖ parts[0] ‖ parts[1] ‖ ...`.
    pub fn tagged(tag: u8, parts: &[&[u8]]) -> Self {
        let mut hasher = Sha256::new();
        hasher.update([tag]);
        for part in parts {
            hasher.update(part);
        }
        let out = hasher.finalize();
        let mut bytes = [0u8; 32];
        bytes.copy_from_slice(&out);
        Hash256(bytes)
    }

    pub fn leaf(data: &[u8]) -> Self {
        Self::tagged(domain::LEAF, &[data])
    }

    /// Interior merkle node.
    pub fn node(left: &Hash256, right: &Hash256) -> Self {
        Self::tagged(domain::NODE, &[&left.0, &right.0])
    }

    /// Hashlock image of a 32-byte preimage.
    pub fn of_secret(secret: &[u8; 32]) -> Self {
        Self::tagged(domain::SECRET, &[secret])
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, hex::FromHexError> {
        let mut bytes = [0u8; 32];
        hex::decode_to_slice(s, &mut bytes)?;
        Ok(Hash256(bytes))
    }

    /// Returns a copy with bit `bit` (0 = LSB of byte 0) flipped.
    pub fn flip_bit(&self, bit: usize) -> Self {
        let mut out = *self;
        out.0[(bit / 8) % 32] ^= 1 << (bit % 8);
        out
    }
}

impl fmt::Debug for Hash256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Hash256({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for Hash256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Hash256 {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Hash256 {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Hash256::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// A 32-byte secret (revocation secret, payment preimage, signing key).
pub type Secret = [u8; 32];

/// Simulated signature: `H(key ‖ message)`. Verification is done by whoever
/// holds the key registry, which in a simulation is the harness.
pub fn sign(key: &Secret, message: &[u8]) -> Hash256 {
    Hash256::tagged(domain::SIGNATURE, &[key, message])
}
