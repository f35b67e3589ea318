//! Seeded random sources with labeled sub-streams.
//!
//! Every stochastic step in a study draws from a [`ChaCha8Rng`] whose seed is
//! derived from the master seed plus a label path, so that train/validate/test
//! splits, variations and per-sample draws never share a stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StudyRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `parent`, a textual label and an index.
pub fn derive_seed(parent: u64, label: &str, index: u64) -> u64 {
    // FNV-1a over the label keeps the mapping stable across builds.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(splitmix64(parent ^ h).wrapping_add(splitmix64(index)))
}

pub fn rng_from_seed(seed: u64) -> StudyRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn sub_rng(parent: u64, label: &str, index: u64) -> StudyRng {
    rng_from_seed(derive_seed(parent, label, index))
}
