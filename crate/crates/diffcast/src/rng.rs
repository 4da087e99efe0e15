//! Seed derivation for reproducible substreams.
//!
//! Every stochastic site (draw index, diffusion step, channel, window,
//! epoch…) gets its own ChaCha stream derived from the run seed and a list
//! of tags, so adding parallelism or reordering work never changes the
//! numbers.

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a seed with an ordered list of tags into a new seed.
pub fn mix(seed: u64, tags: &[u64]) -> u64 {
    let mut s = splitmix64(seed);
    for &t in tags {
        s = splitmix64(s ^ splitmix64(t));
    }
    s
}

/// Independent substream for `(seed, tags)`.
pub fn stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, tags))
}

/// Fill a buffer with standard normal draws.
pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}
