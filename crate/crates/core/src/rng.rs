//! Deterministic random streams.
//!
//! Every random draw in the library comes from a ChaCha8 stream selected by a
//! `(seed, stream)` pair, so results never depend on evaluation order.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags that keep independent consumers of one seed apart.
pub mod domain {
    pub const SCENE: u64 = 0x5343_454e_4500_0000;
    pub const INIT: u64 = 0x494e_4954_0000_0000;
    pub const SHUFFLE: u64 = 0x5348_5546_0000_0000;
    pub const SPLIT: u64 = 0x5350_4c49_5400_0000;
    pub const PROCEDURAL: u64 = 0x5052_4f43_0000_0000;
}

/// Rng positioned on stream `stream` of `seed`.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Child seed for item `index` under `domain`.
pub fn derive_seed(seed: u64, domain: u64, index: u64) -> u64 {
    stream(seed ^ domain, index).next_u64()
}
