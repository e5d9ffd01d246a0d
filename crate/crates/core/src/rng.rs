//! Keyed deterministic randomness.
//!
//! Every stochastic routine takes an explicit [`RngKey`]. A key names a
//! ChaCha8 keystream: `seed` selects the key and `stream` the 64-bit stream
//! id, so the generator is counter-based and two keys with the same pair
//! always yield the same sequence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngKey {
    pub seed: u64,
    pub stream: u64,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngKey {
    pub const fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// Child key for sub-task `tag`. Distinct tags give distinct streams.
    pub fn derive(self, tag: u64) -> Self {
        Self {
            seed: self.seed,
            stream: splitmix64(self.stream ^ splitmix64(tag.wrapping_add(0x5EED))),
        }
    }

    /// Child key named by a string label, for readable call sites.
    pub fn derive_str(self, label: &str) -> Self {
        // FNV-1a; only needs to be stable, not strong.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in label.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        self.derive(h)
    }

    pub fn rng(self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// Tensor of i.i.d. standard-normal entries.
pub fn sample_standard_normal<T: Scalar>(key: RngKey, shape: &[usize]) -> Tensor<T> {
    let mut rng = key.rng();
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| T::of(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    Tensor::from_parts(shape.to_vec(), data)
}

/// `n` uniform draws from `[0, 1)`.
pub fn sample_uniform(key: RngKey, n: usize) -> Vec<f64> {
    let mut rng = key.rng();
    (0..n).map(|_| rng.random::<f64>()).collect()
}

/// Uniformly random permutation of `0..n` (Fisher-Yates).
pub fn permutation(key: RngKey, n: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut key.rng());
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_mean_within_lln_bound() {
        let n = 1_000_000;
        let t: Tensor<f64> = sample_standard_normal(RngKey::new(1, 0), &[n]);
        let mean = t.data().iter().sum::<f64>() / n as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn same_key_is_bitwise_identical() {
        let a: Tensor<f64> = sample_standard_normal(RngKey::new(9, 3), &[4, 5]);
        let b: Tensor<f64> = sample_standard_normal(RngKey::new(9, 3), &[4, 5]);
        assert_eq!(a.data(), b.data());
        assert_eq!(a.shape(), &[4, 5]);
    }

    #[test]
    fn different_stream_differs() {
        let a: Tensor<f64> = sample_standard_normal(RngKey::new(9, 3), &[16]);
        let b: Tensor<f64> = sample_standard_normal(RngKey::new(9, 4), &[16]);
        assert!(a.data().iter().zip(b.data()).any(|(x, y)| x != y));
    }

    #[test]
    fn derived_keys_are_distinct_and_stable() {
        let k = RngKey::new(5, 0);
        assert_eq!(k.derive(1), k.derive(1));
        assert_ne!(k.derive(1), k.derive(2));
        assert_ne!(k.derive_str("noise"), k.derive_str("mask"));
    }

    #[test]
    fn permutation_is_a_permutation() {
        let mut p = permutation(RngKey::new(2, 2), 100);
        p.sort_unstable();
        assert_eq!(p, (0..100).collect::<Vec<_>>());
    }
}
