use rand::{Rng as _, RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;

use super::Tensor;
use crate::error::{Error, Result};

/// Seeded SplitMix64 stream. Identical seeds give identical streams within
/// this implementation; nothing is promised across implementations.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: SplitMix64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: SplitMix64::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[lo, hi)`. Callers guarantee `lo < hi`.
    pub fn uniform(&mut self, lo: f32, hi: f32) -> f32 {
        let u: f32 = self.inner.random();
        let v = lo + (hi - lo) * u;
        if v >= hi {
            f32::from_bits(hi.to_bits() - 1).max(lo)
        } else {
            v
        }
    }

    pub fn uniform_f64(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    /// Uniform index in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Standard normal draw (Box-Muller).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.inner.random::<f64>();
        let u2: f64 = self.inner.random();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

pub fn rng_uniform(rng: &mut Rng, shape: &[usize], lo: f32, hi: f32) -> Result<Tensor> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Parameter(format!(
            "uniform range requires lo < hi, got [{lo}, {hi})"
        )));
    }
    let len = shape.iter().product();
    let data = (0..len).map(|_| rng.uniform(lo, hi)).collect();
    Tensor::new(shape.to_vec(), data)
}
