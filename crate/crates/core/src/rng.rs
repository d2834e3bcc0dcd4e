//! Deterministic random sub-streams.
//!
//! Every stochastic stage derives its generator from a base seed plus a
//! list of integer tags (stage id, sample index, run index, ...). The
//! resulting stream depends only on those values, never on which worker
//! happens to execute it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a base seed with a sequence of tags into a new 64-bit seed.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut h = splitmix64(base);
    for &t in tags {
        h = splitmix64(h ^ splitmix64(t.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    h
}

pub fn stream(base: u64, tags: &[u64]) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tags))
}

/// Stage tags, so sub-streams of different pipeline stages never collide.
pub mod stage {
    pub const SOURCE_DIFFUSION: u64 = 1;
    pub const TARGET_DIFFUSION: u64 = 2;
    pub const DATASET_SEEDS: u64 = 3;
    pub const DATASET_SAMPLE: u64 = 4;
    pub const TRAIN: u64 = 5;
    pub const INFER: u64 = 6;
    pub const WORLD: u64 = 7;
    pub const EPISODE: u64 = 8;
    pub const OBSERVE: u64 = 9;
    pub const INIT: u64 = 10;
    pub const SYNTH: u64 = 11;
}
