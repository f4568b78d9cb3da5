//! Seeded, platform-independent random numbers.
//!
//! The generator is ChaCha8 (a counter-based stream cipher) keyed from a
//! 64-bit seed. Floats are built from the top 53 bits of each 64-bit draw,
//! so a seed yields the same sample stream on every platform.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent generator for a named sub-stream.
    pub fn fork(&self, tag: u64) -> Rng {
        Rng::new(derive_seed(self.seed, &[tag]))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 bits of resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> Result<f64> {
        check_range(lo, hi)?;
        Ok(lo + (hi - lo) * self.uniform())
    }

    /// Uniform integer in `0..n` (rejection sampling, no modulo bias).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn uniform_tensor<T: Real>(&mut self, lo: f64, hi: f64, rows: usize, cols: usize) -> Result<Tensor<T>> {
        check_range(lo, hi)?;
        let data = (0..rows * cols)
            .map(|_| T::lit(lo + (hi - lo) * self.uniform()))
            .collect();
        Tensor::new(rows, cols, data)
    }

    /// 0/1 tensor with `P(1) = p`.
    pub fn bernoulli_tensor<T: Real>(&mut self, p: f64, rows: usize, cols: usize) -> Result<Tensor<T>> {
        check_probability(p)?;
        let data = (0..rows * cols)
            .map(|_| if self.uniform() < p { T::one() } else { T::zero() })
            .collect();
        Tensor::new(rows, cols, data)
    }

    pub fn shuffle<E>(&mut self, items: &mut [E]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }
}

fn check_range(lo: f64, hi: f64) -> Result<()> {
    if !lo.is_finite() || !hi.is_finite() || lo >= hi {
        return Err(Error::InvalidArgument(format!("invalid range [{lo}, {hi})")));
    }
    Ok(())
}

fn check_probability(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("probability {p} outside [0, 1]")));
    }
    Ok(())
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic child seed for a coordinate path, e.g. a sweep grid cell.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}
