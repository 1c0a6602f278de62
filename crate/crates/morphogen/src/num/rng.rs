//! Deterministic RNG derivation. Every random decision in the crate draws
//! from a ChaCha20 stream whose seed is derived from one master seed plus a
//! purpose label, so adding or removing one consumer never perturbs the
//! stream any other consumer sees.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Derive a child seed from a master seed and a purpose label.
///
/// FNV-1a over the label, mixed with the master seed through a splitmix64
/// finalizer. Both pieces are simple, stable, and fully specified here, so
/// derived seeds never change across toolchain or dependency upgrades.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = h ^ master.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A ChaCha20 stream for the given master seed and purpose label.
pub fn derive_rng(master: u64, label: &str) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(derive_seed(master, label))
}
