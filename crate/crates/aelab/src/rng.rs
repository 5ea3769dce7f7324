//! Seedable random number generation.
//!
//! The generator is SplitMix64 (Steele, Lea & Flood 2014): a 64-bit
//! linear counter advanced by the golden-gamma constant, with a
//! finalizing mix per output. It is chosen because the draw sequence is
//! exactly specifiable, so identical seeds give bit-identical streams on
//! every platform. Independent streams derive from `(seed, stream_id)`.
//!
//! Normal deviates use the Box-Muller transform.

use crate::tensor::{Scalar, Tensor};

const GAMMA: u64 = 0x9E3779B97F4A7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
pub struct Rng {
    state: u64,
    /// Box-Muller produces deviates in pairs; the spare is cached.
    cached_normal: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            state: mix(seed),
            cached_normal: None,
        }
    }

    /// Independent stream for `(seed, stream_id)`.
    ///
    /// The initial state is `mix(mix(seed) ^ mix(stream_id + 1))`, so
    /// distinct stream ids under the same seed decorrelate immediately.
    pub fn stream(seed: u64, stream_id: u64) -> Self {
        Rng {
            state: mix(mix(seed) ^ mix(stream_id.wrapping_add(1))),
            cached_normal: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GAMMA);
        mix(self.state)
    }

    /// Uniform in [0, 1) with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.uniform() * n as f64) as usize % n
    }

    /// Standard normal deviate via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.cached_normal.take() {
            return z;
        }
        // u1 in (0, 1] so the log is finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.cached_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn fill_normal<T: Scalar>(&mut self, shape: &[usize]) -> Tensor<T> {
        Tensor::from_fn(shape, |_| T::from_f64(self.normal()))
    }

    pub fn fill_uniform<T: Scalar>(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor<T> {
        Tensor::from_fn(shape, |_| T::from_f64(self.uniform_in(lo, hi)))
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }
}
