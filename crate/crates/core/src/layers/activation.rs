use crate::error::{shape_err, Result};
use crate::tensor::{Scalar, Tensor4};

/// Which inputs were strictly positive.
#[derive(Clone, Debug)]
pub struct ReluCache {
    active: Vec<bool>,
}

pub fn relu_forward<T: Scalar>(x: &Tensor4<T>) -> (Tensor4<T>, ReluCache) {
    let active = x.as_slice().iter().map(|&v| v > T::zero()).collect();
    (x.map(|v| if v > T::zero() { v } else { T::zero() }), ReluCache { active })
}

/// The subgradient at zero is taken to be zero.
pub fn relu_backward<T: Scalar>(grad_y: &Tensor4<T>, cache: &ReluCache) -> Result<Tensor4<T>> {
    if grad_y.len() != cache.active.len() {
        return shape_err(format!("relu gradient {} does not match its cache", grad_y.dims()));
    }
    let data = grad_y
        .as_slice()
        .iter()
        .zip(&cache.active)
        .map(|(&g, &on)| if on { g } else { T::zero() })
        .collect();
    Tensor4::from_vec(grad_y.dims(), data)
}
