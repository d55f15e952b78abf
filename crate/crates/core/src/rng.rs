//! Seeded random streams.
//!
//! Every random quantity comes from ChaCha20 (`rand_chacha`), a counter-based
//! generator with a 64-bit stream id. The key is `seed_from_u64(seed)`; the
//! stream id is `(trial << 8) | purpose`. Two draws for the same
//! (seed, trial, purpose) are bit-identical, and distinct trials or purposes
//! read disjoint keystreams.
//!
//! Uniforms are `((u64 >> 11) + 0.5) · 2⁻⁵³`, which lies strictly inside (0, 1);
//! Gaussians are `Φ⁻¹(uniform)` with the quantile from [`crate::normal`].

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

use crate::normal;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Design = 0,
    Signal = 1,
    Noise = 2,
    /// Auxiliary Gaussians of the decomposition.
    Auxiliary = 3,
    /// Free stream for tests and Monte Carlo oracles.
    Oracle = 4,
}

pub const MAX_TRIAL: u64 = (1 << 56) - 1;

#[derive(Debug, Clone)]
pub struct Stream {
    inner: ChaCha20Rng,
}

impl Stream {
    pub fn new(seed: u64, trial: u64, purpose: Purpose) -> Self {
        assert!(trial <= MAX_TRIAL, "trial index {trial} exceeds 2^56 - 1");
        let mut inner = ChaCha20Rng::seed_from_u64(seed);
        inner.set_stream((trial << 8) | purpose as u64);
        Stream { inner }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    #[inline]
    pub fn uniform(&mut self) -> f64 {
        ((self.inner.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn gaussian(&mut self) -> f64 {
        normal::inv_cdf(self.uniform())
    }

    pub fn fill_gaussian(&mut self, out: &mut [f64], sd: f64) {
        for x in out.iter_mut() {
            *x = sd * self.gaussian();
        }
    }

    /// Uniform integer in [0, bound) by rejection, so there is no modulo bias.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0);
        let zone = u64::MAX - (u64::MAX - bound + 1) % bound;
        loop {
            let v = self.inner.next_u64();
            if v <= zone {
                return v % bound;
            }
        }
    }
}
