//! Seed derivation. Every stochastic component draws from a ChaCha stream
//! seeded by mixing a parent seed with a stream tag.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(parent: u64, stream: u64) -> u64 {
    mix64(parent ^ mix64(stream.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

/// Derives a child seed from a textual tag, e.g. `"train/NOR_AD"`.
pub fn derive_str(parent: u64, tag: &str) -> u64 {
    // FNV-1a over the tag, then mixed with the parent
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    derive(parent, h)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
