//! Seeded pseudo-random numbers.
//!
//! Every stochastic piece of the crate draws from [`SeededRng`], a SplitMix64
//! stream. The conversions to floating point are fixed here so that a stream
//! can be reproduced bit-for-bit by another implementation:
//!
//! * `uniform()` takes the top 53 bits of the next output: `(x >> 11) * 2^-53`.
//! * `normal()` is Box–Muller over two uniforms `u1, u2`, returning
//!   `sqrt(-2 ln(1 - u1)) * cos(2π u2)`; the sine branch is discarded.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;

#[derive(Clone, Debug)]
pub struct SeededRng(SplitMix64);

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng(SplitMix64::seed_from_u64(seed))
    }

    /// Derives an independent stream for a sub-component, e.g. one per
    /// architecture in the oracle.
    pub fn derive(seed: u64, stream: u64) -> Self {
        let mut base = SplitMix64::seed_from_u64(seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        SeededRng::new(base.next_u64())
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n` by multiply-shift on the full 64-bit output.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
