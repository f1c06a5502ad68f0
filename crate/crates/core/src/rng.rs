use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::hash::Secret;

/// Every simulation draws from exactly one of these, seeded from the run seed.
pub type SimRng = ChaCha20Rng;

pub fn seeded(seed: u64) -> SimRng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn secret(rng: &mut SimRng) -> Secret {
    let mut s = [0u8; 32];
    rng.fill_bytes(&mut s);
    s
}
