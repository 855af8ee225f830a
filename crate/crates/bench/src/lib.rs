//! Input generators shared by the benchmarks.

use fusenet::{Dims, Scalar, Tensor4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_tensor<T: Scalar>(dims: impl Into<Dims>, seed: u64) -> Tensor4<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor4::from_fn(dims, |_, _, _, _| T::from_f64_lossy(rng.gen_range(-1.0..1.0))).expect("valid dims")
}

pub fn labels(n: usize, classes: usize) -> Vec<usize> {
    (0..n).map(|i| i % classes).collect()
}
