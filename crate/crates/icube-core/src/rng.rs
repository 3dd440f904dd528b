//! Seeded randomness.
//!
//! Every stochastic operation takes a single `u64` seed. Sub-streams for the
//! separate pieces of one run (data, split, outcome model, strategy, ...) are
//! obtained with [`derive`], so results never depend on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub const DATA: u64 = 1;
pub const SPLIT: u64 = 2;
pub const OUTCOME_MODEL: u64 = 3;
pub const STRATEGY: u64 = 4;
pub const PERMUTATION: u64 = 5;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes `tag` into `seed` with the splitmix64 finalizer.
pub fn derive(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
