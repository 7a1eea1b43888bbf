//! Weight initialization.
//!
//! Randomness is always drawn as f64 and converted, so a seed produces the
//! same model in f32 and f64 instantiations.

use rand::Rng;

use super::scalar::Scalar;
use super::tensor::Tensor;

/// Fan-in scaled uniform: U(-sqrt(1/fan_in), +sqrt(1/fan_in)).
pub fn uniform_fan_in<S: Scalar, R: Rng>(rng: &mut R, dims: &[usize], fan_in: usize) -> Tensor<S> {
    let bound = (1.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(dims, |_| S::of_f64(rng.random_range(-bound..bound)))
}

/// Standard normal tensor.
pub fn standard_normal<S: Scalar, R: Rng>(rng: &mut R, dims: &[usize]) -> Tensor<S> {
    Tensor::from_fn(dims, |_| S::of_f64(normal_sample(rng)))
}

/// One standard normal draw via Box-Muller (keeps the stream dtype-agnostic).
pub fn normal_sample<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u1: f64 = rng.random_range(0.0..1.0);
        let u2: f64 = rng.random_range(0.0..1.0);
        if u1 > 1e-300 {
            return (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        }
    }
}
