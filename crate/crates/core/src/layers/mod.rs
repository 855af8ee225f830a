//! Forward and backward passes for every layer kind in the network.
//!
//! Each layer returns its output together with whatever the backward pass
//! needs; backward functions take that cache back and return the gradient with
//! respect to the layer input (and parameters, where there are any).

mod activation;
mod conv;
mod dense;
mod dropout;
mod loss;
mod pool;

pub use activation::{relu_backward, relu_forward, ReluCache};
pub use conv::{ConvCache, ConvGrads, ConvLayer};
pub use dense::{DenseCache, DenseGrads, DenseLayer};
pub use dropout::{dropout_backward, dropout_forward, DropoutMask, DropoutSpec};
pub use loss::{softmax, softmax_xent, SoftmaxXent};
pub use pool::{gap_backward, gap_forward, maxpool_backward, maxpool_forward, GapCache, MaxPoolCache, Pool2};

/// Whether a pass is part of training (dropout active, caches usable for
/// backward) or inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[cfg(test)]
pub(crate) mod test_util {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::tensor::{Dims, Tensor4};

    pub const STEP: f64 = 1e-5;
    pub const TOL: f64 = 1e-4;

    pub fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    pub fn random_tensor(r: &mut impl Rng, dims: Dims) -> Tensor4<f64> {
        Tensor4::from_fn(dims, |_, _, _, _| r.gen_range(-1.0..1.0)).unwrap()
    }

    pub fn rel_error(a: f64, n: f64) -> f64 {
        (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
    }

    fn probe_loss(y: &Tensor4<f64>, probe: &Tensor4<f64>) -> f64 {
        y.as_slice().iter().zip(probe.as_slice()).map(|(a, b)| a * b).sum()
    }

    /// Checks `analytic` against central differences of `sum(probe * f(x))`.
    pub fn check_input_grad(
        x: &Tensor4<f64>,
        analytic: &Tensor4<f64>,
        probe: &Tensor4<f64>,
        f: impl Fn(&Tensor4<f64>) -> Tensor4<f64>,
    ) {
        assert_eq!(x.dims(), analytic.dims());
        for i in 0..x.len() {
            let mut plus = x.clone();
            plus.as_mut_slice()[i] += STEP;
            let mut minus = x.clone();
            minus.as_mut_slice()[i] -= STEP;
            let numeric = (probe_loss(&f(&plus), probe) - probe_loss(&f(&minus), probe)) / (2.0 * STEP);
            let a = analytic.as_slice()[i];
            assert!(rel_error(a, numeric) <= TOL, "input {i}: analytic {a} vs numeric {numeric}");
        }
    }

    pub fn check_param_grad(
        params: &[f64],
        analytic: &[f64],
        probe: &Tensor4<f64>,
        f: impl Fn(&[f64]) -> Tensor4<f64>,
    ) {
        assert_eq!(params.len(), analytic.len());
        for i in 0..params.len() {
            let mut plus = params.to_vec();
            plus[i] += STEP;
            let mut minus = params.to_vec();
            minus[i] -= STEP;
            let numeric = (probe_loss(&f(&plus), probe) - probe_loss(&f(&minus), probe)) / (2.0 * STEP);
            let a = analytic[i];
            assert!(rel_error(a, numeric) <= TOL, "param {i}: analytic {a} vs numeric {numeric}");
        }
    }
}
