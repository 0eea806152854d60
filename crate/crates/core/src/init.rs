//! Seeded parameter initialization.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Scalar, Tensor};

pub type Rng64 = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng64 {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform in `[-bound, bound]`.
pub fn uniform<T: Scalar>(rng: &mut Rng64, shape: &[usize], bound: f64) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64(rng.gen_range(-bound..=bound)))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("non-empty shape")
}

/// He-uniform bound for layers followed by a rectifier.
pub fn kaiming<T: Scalar>(rng: &mut Rng64, shape: &[usize], fan_in: usize) -> Tensor<T> {
    uniform(rng, shape, (6.0 / fan_in as f64).sqrt())
}

/// Unit-variance-preserving bound for linear layers without a rectifier.
pub fn lecun<T: Scalar>(rng: &mut Rng64, shape: &[usize], fan_in: usize) -> Tensor<T> {
    uniform(rng, shape, (3.0 / fan_in as f64).sqrt())
}
