//! Seed derivation for reproducible randomness.
//!
//! Every random choice in the crate (vote tie-breaks, splits, tagging orders,
//! subsampling) is driven by a ChaCha stream whose seed is derived from a base
//! seed plus string/integer labels, so results do not depend on iteration order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Stable 64-bit mix of a base seed and a sequence of labels.
pub fn mix_seed(seed: u64, labels: &[&[u8]]) -> u64 {
    let mut h = FNV_OFFSET;
    for b in seed.to_le_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    for label in labels {
        // length prefix keeps ("ab","c") distinct from ("a","bc")
        for b in (label.len() as u64)
            .to_le_bytes()
            .iter()
            .chain(label.iter())
        {
            h ^= u64::from(*b);
            h = h.wrapping_mul(FNV_PRIME);
        }
    }
    h
}

pub fn rng_for(seed: u64, labels: &[&[u8]]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(seed, labels))
}
