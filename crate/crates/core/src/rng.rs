//! Deterministic random streams.
//!
//! The generator is ChaCha8 (counter-based, platform independent) seeded from
//! a `u64` through `SeedableRng::seed_from_u64`. Samples are drawn in `f64`
//! and rounded to the target scalar, so an `f32` and an `f64` tensor drawn
//! from the same seed agree up to rounding.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
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

    /// Independent child stream, derived from this stream's next output.
    pub fn fork(&mut self) -> Rng {
        Rng::new(self.inner.random::<u64>())
    }

    pub fn next_f64(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random::<u64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Entries i.i.d. uniform on `[lo, hi)`.
    pub fn uniform<T: Scalar>(&mut self, shape: &[usize], lo: f64, hi: f64) -> Result<Tensor<T>> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::invalid(format!("uniform range [{lo}, {hi}) is empty")));
        }
        let n: usize = shape.iter().product();
        let hi_t = T::lit(hi);
        let data = (0..n)
            .map(|_| {
                let v = T::lit(lo + (hi - lo) * self.next_f64());
                // rounding to a narrower type may land on `hi`
                if v >= hi_t {
                    T::lit(lo).max(prev_toward_zero(hi_t))
                } else {
                    v
                }
            })
            .collect();
        Tensor::from_vec(shape, data)
    }

    /// Entries i.i.d. `Normal(0, sigma^2)`.
    pub fn normal<T: Scalar>(&mut self, shape: &[usize], sigma: f64) -> Result<Tensor<T>> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::invalid(format!("sigma must be >= 0, got {sigma}")));
        }
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::lit(sigma * self.standard_normal())).collect();
        Tensor::from_vec(shape, data)
    }
}

fn prev_toward_zero<T: Scalar>(v: T) -> T {
    // largest representable value strictly below `v` for positive and negative v
    let eps = T::epsilon() * v.abs().max(T::min_positive_value());
    let mut out = v - eps;
    while out >= v {
        out = out - eps;
    }
    out
}
