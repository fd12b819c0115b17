//! Seed derivation and the random generator used for every stochastic step.
//!
//! All randomness comes from ChaCha8 seeded through `seed_from_u64`, whose
//! output stream is fixed across platforms and crate releases. Sub-seeds are
//! derived from a master seed and a byte tag with FNV-1a followed by a
//! SplitMix64 finalizer, so a class or fold gets the same stream whether it
//! is processed serially or in parallel.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Derives a sub-seed from `master` and an arbitrary tag.
pub fn derive(master: u64, tag: &[u8]) -> u64 {
    splitmix64(master ^ splitmix64(fnv1a(tag)))
}

/// Derives a sub-seed from `master` and a numeric index (fold, retry, ...).
pub fn derive_index(master: u64, index: u64) -> u64 {
    derive(master, &index.to_le_bytes())
}

pub fn rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform draw in `[0, 1)` from the top 53 bits of one `u64`.
pub fn unit_f64(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
