use crate::error::{shape_err, Result};
use crate::tensor::{gemm, Dims, MatRef, Scalar, Tensor4};

/// Fully connected layer; `weights` is row-major `(in_features, out_features)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer<T> {
    pub in_features: usize,
    pub out_features: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct DenseCache<T> {
    input: Tensor4<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrads<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn new(in_features: usize, out_features: usize) -> Result<Self> {
        if in_features == 0 || out_features == 0 {
            return shape_err(format!("dense extents must be >= 1, got ({in_features},{out_features})"));
        }
        Ok(DenseLayer {
            in_features,
            out_features,
            weights: vec![T::zero(); in_features * out_features],
            bias: vec![T::zero(); out_features],
        })
    }

    fn check_input(&self, x: Dims) -> Result<()> {
        if x.item_len() != self.in_features {
            return shape_err(format!("dense layer expects {} features per item, got {x}", self.in_features));
        }
        Ok(())
    }

    /// Each batch item is flattened; the output is `(n, out_features, 1, 1)`.
    pub fn apply(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let d = x.dims();
        self.check_input(d)?;
        let mut out = Vec::with_capacity(d.n * self.out_features);
        for _ in 0..d.n {
            out.extend_from_slice(&self.bias);
        }
        gemm(
            MatRef::row_major(x.as_slice(), d.n, self.in_features),
            MatRef::row_major(&self.weights, self.in_features, self.out_features),
            T::one(),
            &mut out,
        );
        Tensor4::from_vec((d.n, self.out_features, 1, 1), out)
    }

    pub fn forward(&self, x: &Tensor4<T>) -> Result<(Tensor4<T>, DenseCache<T>)> {
        Ok((self.apply(x)?, DenseCache { input: x.clone() }))
    }

    pub fn backward(&self, grad_y: &Tensor4<T>, cache: &DenseCache<T>) -> Result<(Tensor4<T>, DenseGrads<T>)> {
        let x = &cache.input;
        let n = x.dims().n;
        if grad_y.dims() != Dims::new(n, self.out_features, 1, 1) {
            return shape_err(format!("dense gradient {} does not match batch {n}", grad_y.dims()));
        }
        let gy = MatRef::row_major(grad_y.as_slice(), n, self.out_features);
        let xm = MatRef::row_major(x.as_slice(), n, self.in_features);

        let mut gw = vec![T::zero(); self.in_features * self.out_features];
        gemm(xm.t(), gy, T::zero(), &mut gw);
        let mut gx = vec![T::zero(); n * self.in_features];
        gemm(gy, MatRef::row_major(&self.weights, self.in_features, self.out_features).t(), T::zero(), &mut gx);
        let bias = (0..self.out_features)
            .map(|j| (0..n).map(|i| grad_y.as_slice()[i * self.out_features + j]).sum())
            .collect();
        Ok((Tensor4::from_vec(x.dims(), gx)?, DenseGrads { weights: gw, bias }))
    }
}
