//! Shared inputs for the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tcm_core::Tensor;

pub fn random_tensor(seed: u64, shape: &[usize]) -> Tensor {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()).expect("sized from shape")
}

/// `(bona, spoof)` scores from two overlapping uniform distributions.
pub fn random_scores(seed: u64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let bona = (0..n).map(|_| r.gen_range(-0.5..1.5)).collect();
    let spoof = (0..n).map(|_| r.gen_range(-1.5..0.5)).collect();
    (bona, spoof)
}
