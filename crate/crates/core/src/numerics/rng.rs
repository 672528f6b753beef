//! Seeded random streams.
//!
//! Every stochastic operation takes an explicit `u64` seed and draws from a
//! ChaCha8 stream cipher, whose output depends only on (key, stream, counter)
//! and is identical on every platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Rng = ChaCha8Rng;

/// Generator keyed by `seed`, positioned on an independent `stream`.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finalizer; a stable bijective mix used to derive child seeds.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derives a child seed from a parent seed and a list of coordinates.
pub fn derive_seed(seed: u64, coords: &[u64]) -> u64 {
    coords
        .iter()
        .fold(splitmix64(seed), |acc, &c| splitmix64(acc ^ splitmix64(c)))
}

pub fn standard_normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn normal_vec(rng: &mut Rng, n: usize, std: f64) -> Vec<f64> {
    (0..n).map(|_| std * standard_normal(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a = normal_vec(&mut stream(7, 0), 8, 1.0);
        let b = normal_vec(&mut stream(7, 0), 8, 1.0);
        let c = normal_vec(&mut stream(7, 1), 8, 1.0);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn derived_seeds_depend_on_every_coordinate() {
        let base = derive_seed(1, &[0, 0, 0]);
        assert_ne!(base, derive_seed(1, &[0, 0, 1]));
        assert_ne!(base, derive_seed(1, &[1, 0, 0]));
        assert_ne!(base, derive_seed(2, &[0, 0, 0]));
        assert_eq!(base, derive_seed(1, &[0, 0, 0]));
    }
}
