use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::layers::Mode;
use crate::tensor::{Scalar, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DropoutSpec {
    pub rate: f64,
    pub mode: Mode,
}

impl DropoutSpec {
    pub fn new(rate: f64, mode: Mode) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate must lie in [0, 1), got {rate}")));
        }
        Ok(DropoutSpec { rate, mode })
    }
}

/// Per-element multipliers (`0` or `1/(1-rate)`); `None` when the pass was the identity.
#[derive(Clone, Debug)]
pub struct DropoutMask<T> {
    scale: Option<Vec<T>>,
}

/// Inverted dropout: survivors are rescaled at training time so inference is
/// the identity. Eval mode and rate 0 never draw from `rng`.
pub fn dropout_forward<T: Scalar, R: Rng + ?Sized>(
    x: &Tensor4<T>,
    spec: DropoutSpec,
    rng: &mut R,
) -> Result<(Tensor4<T>, DropoutMask<T>)> {
    if spec.mode == Mode::Eval || spec.rate == 0.0 {
        return Ok((x.clone(), DropoutMask { scale: None }));
    }
    let keep = T::from_f64_lossy(1.0 / (1.0 - spec.rate));
    let scale: Vec<T> = (0..x.len())
        .map(|_| if rng.gen::<f64>() < spec.rate { T::zero() } else { keep })
        .collect();
    let data = x.as_slice().iter().zip(&scale).map(|(&v, &s)| v * s).collect();
    Ok((Tensor4::from_vec(x.dims(), data)?, DropoutMask { scale: Some(scale) }))
}

pub fn dropout_backward<T: Scalar>(grad_y: &Tensor4<T>, mask: &DropoutMask<T>) -> Result<Tensor4<T>> {
    match &mask.scale {
        None => Ok(grad_y.clone()),
        Some(scale) if scale.len() == grad_y.len() => {
            let data = grad_y.as_slice().iter().zip(scale).map(|(&g, &s)| g * s).collect();
            Tensor4::from_vec(grad_y.dims(), data)
        }
        Some(_) => shape_err(format!("dropout gradient {} does not match its mask", grad_y.dims())),
    }
}
