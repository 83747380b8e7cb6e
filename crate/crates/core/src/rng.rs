//! Deterministic stream derivation.
//!
//! Every random stream in the crate is a `ChaCha8Rng` whose seed is a
//! SplitMix64 fold of a list of integers (base seed, purpose tag, indices).
//! Two callers passing the same list get the same stream regardless of
//! thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Purpose tags keep data-generation and fitting streams disjoint.
pub mod tag {
    pub const DATA: u64 = 0x6461_7461;
    pub const FIT: u64 = 0x6669_7421;
    pub const PROSTATE: u64 = 0x7073_6121;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn derive_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x243F_6A88_85A3_08D3, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(parts: &[u64]) -> Stream {
    ChaCha8Rng::seed_from_u64(derive_seed(parts))
}
