//! Seeded random streams.
//!
//! Every stochastic component draws from ChaCha8 (a counter-based stream
//! cipher generator from `rand_chacha`). A stream is identified by a 64-bit
//! seed plus a 64-bit stream id, so independent consumers such as "world 17"
//! or "prediction sample 5" never share state and results do not depend on
//! evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::scalar::Scalar;

pub type Rng = ChaCha8Rng;

/// Well-known stream ids. Keeping them in one place avoids accidental reuse.
pub mod stream {
    pub const WORLD_LAYOUT: u64 = 1;
    pub const WORLD_TEXTURE: u64 = 2;
    pub const WORLD_OBSTACLES: u64 = 3;
    pub const TRAJECTORY: u64 = 4;
    pub const SWEEP: u64 = 5;
    pub const AUGMENT: u64 = 6;
    pub const INIT: u64 = 7;
    pub const TRAIN: u64 = 8;
    pub const PREDICT: u64 = 9;
    pub const REPLAY: u64 = 10;
    pub const PSEUDO: u64 = 11;
}

/// Creates the generator for `(seed, stream)`.
pub fn rng_for(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives a child seed from a parent seed and an index (SplitMix64 finalizer).
pub fn derive_seed(parent: u64, index: u64) -> u64 {
    let mut z = parent
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform value in `[0, 1)` from a hash of the inputs; stateless.
pub fn hash_unit(seed: u64, a: u64, b: u64) -> f64 {
    let h = derive_seed(derive_seed(seed, a), b);
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Fills a buffer with standard normal draws.
pub fn normal_vec<T: Scalar>(rng: &mut Rng, len: usize) -> Vec<T> {
    (0..len)
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            T::lit(v)
        })
        .collect()
}
