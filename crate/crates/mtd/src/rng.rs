//! Seeded random streams with deterministic child derivation.
//!
//! Every stochastic operation in this crate takes an explicit [`Rng`].
//! A stream is identified by a 64-bit seed; the same seed always produces the
//! same draws. Independent sub-streams are derived with [`Rng::child`], so a
//! master seed fans out to per-sequence / per-chain streams without any shared
//! mutable state.

use rand::Rng as _;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Gamma};

/// Deterministic random stream keyed by a 64-bit seed.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha12Rng,
}

/// SplitMix64 output function; used to derive child seeds from (seed, index).
fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha12Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derive the `index`-th child stream. Children of the same parent are
    /// pairwise independent for practical purposes, and the derivation only
    /// depends on `(parent seed, index)`, never on the parent's draw position.
    pub fn child(&self, index: u64) -> Rng {
        let mixed = splitmix64(self.seed.wrapping_add(splitmix64(index)));
        Rng::new(mixed)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform integer in `0..n`.
    pub fn uniform_int(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        self.inner.random_range(0..n)
    }

    /// Gamma(shape, 1) variate.
    pub fn gamma(&mut self, shape: f64) -> f64 {
        debug_assert!(shape > 0.0);
        Gamma::new(shape, 1.0)
            .expect("gamma shape must be positive")
            .sample(&mut self.inner)
    }

    /// Standard normal variate.
    pub fn normal(&mut self) -> f64 {
        rand_distr::StandardNormal.sample(&mut self.inner)
    }

    /// Index draw from an unnormalized nonnegative weight vector.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        debug_assert!(!weights.is_empty());
        let total: f64 = weights.iter().sum();
        debug_assert!(total > 0.0);
        let u = self.uniform() * total;
        let mut acc = 0.0;
        for (i, &w) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        weights.len() - 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..100 {
            assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
        }
    }

    #[test]
    fn children_are_distinct_and_reproducible() {
        let root = Rng::new(7);
        let mut c0 = root.child(0);
        let mut c1 = root.child(1);
        let mut c0_again = root.child(0);
        let x0 = c0.uniform();
        assert_ne!(x0, c1.uniform());
        assert_eq!(x0.to_bits(), c0_again.uniform().to_bits());
    }

    #[test]
    fn child_derivation_ignores_parent_position() {
        let mut root = Rng::new(9);
        let before = root.child(3);
        let _ = root.uniform();
        let after = root.child(3);
        let mut a = before.clone();
        let mut b = after.clone();
        assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
    }

    #[test]
    fn categorical_respects_weights() {
        let mut rng = Rng::new(11);
        let mut counts = [0usize; 3];
        for _ in 0..30_000 {
            counts[rng.categorical(&[0.2, 0.3, 0.5])] += 1;
        }
        let freqs: Vec<f64> = counts.iter().map(|&c| c as f64 / 30_000.0).collect();
        for (f, p) in freqs.iter().zip([0.2, 0.3, 0.5]) {
            assert!((f - p).abs() < 0.01, "freq {f} vs prob {p}");
        }
    }
}
