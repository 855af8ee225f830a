//! Valid 2D cross-correlation. A 1D convolution along the time axis is the
//! special case of filter height 1.
//!
//! The batch is unrolled into a column matrix of shape
//! `(kh*kw*c_in, n*oh*ow)` so both passes reduce to one matrix product each.

use crate::error::{shape_err, Result};
use crate::tensor::{gemm, Dims, MatRef, Scalar, Tensor4};

/// Trainable convolution block.
///
/// `weights` is laid out `(kh, kw, c_in, c_out)`, i.e. the filter tap `(a, b)`
/// applied to input channel `c` for output map `q` lives at
/// `((a*kw + b)*c_in + c)*c_out + q`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T> {
    pub kh: usize,
    pub kw: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub stride: (usize, usize),
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct ConvCache<T> {
    input: Tensor4<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ConvLayer<T> {
    /// Zero-initialized layer.
    pub fn new(kh: usize, kw: usize, c_in: usize, c_out: usize, stride: (usize, usize)) -> Result<Self> {
        if [kh, kw, c_in, c_out].contains(&0) {
            return shape_err(format!("convolution extents must be >= 1, got ({kh},{kw},{c_in},{c_out})"));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return shape_err(format!("convolution stride must be >= 1, got {stride:?}"));
        }
        Ok(ConvLayer {
            kh,
            kw,
            c_in,
            c_out,
            stride,
            weights: vec![T::zero(); kh * kw * c_in * c_out],
            bias: vec![T::zero(); c_out],
        })
    }

    /// Inputs feeding one output unit.
    pub fn fan_in(&self) -> usize {
        self.kh * self.kw * self.c_in
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.kh, self.kw, self.c_in, self.c_out]
    }

    #[inline]
    pub fn weight_index(&self, a: usize, b: usize, c: usize, q: usize) -> usize {
        ((a * self.kw + b) * self.c_in + c) * self.c_out + q
    }

    pub fn output_dims(&self, input: Dims) -> Result<Dims> {
        if input.c != self.c_in {
            return shape_err(format!("convolution expects {} input channels, got {input}", self.c_in));
        }
        if input.h < self.kh || input.w < self.kw {
            return shape_err(format!(
                "input {input} is smaller than the ({},{}) filter",
                self.kh, self.kw
            ));
        }
        Ok(Dims {
            n: input.n,
            c: self.c_out,
            h: (input.h - self.kh) / self.stride.0 + 1,
            w: (input.w - self.kw) / self.stride.1 + 1,
        })
    }

    fn im2col(&self, x: &Tensor4<T>, out: Dims) -> Vec<T> {
        let d = x.dims();
        let (sh, sw) = self.stride;
        let p = out.h * out.w;
        let np = d.n * p;
        let mut cols = vec![T::zero(); self.fan_in() * np];
        let src = x.as_slice();
        for a in 0..self.kh {
            for b in 0..self.kw {
                for c in 0..self.c_in {
                    let row = (a * self.kw + b) * self.c_in + c;
                    let dst_row = &mut cols[row * np..(row + 1) * np];
                    for n in 0..d.n {
                        for i in 0..out.h {
                            let src_base = ((n * d.c + c) * d.h + i * sh + a) * d.w + b;
                            let dst = &mut dst_row[n * p + i * out.w..n * p + (i + 1) * out.w];
                            for (j, v) in dst.iter_mut().enumerate() {
                                *v = src[src_base + j * sw];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    pub fn forward(&self, x: &Tensor4<T>) -> Result<(Tensor4<T>, ConvCache<T>)> {
        let y = self.apply(x)?;
        Ok((y, ConvCache { input: x.clone() }))
    }

    /// Forward pass without retaining a cache.
    pub fn apply(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let out = self.output_dims(x.dims())?;
        let p = out.h * out.w;
        let np = out.n * p;
        let cols = self.im2col(x, out);

        // (c_out x K) * (K x N*P)
        let mut prod = vec![T::zero(); self.c_out * np];
        gemm(
            MatRef::row_major(&self.weights, self.fan_in(), self.c_out).t(),
            MatRef::row_major(&cols, self.fan_in(), np),
            T::zero(),
            &mut prod,
        );

        let mut y = Vec::with_capacity(out.len());
        for n in 0..out.n {
            for q in 0..self.c_out {
                let bias = self.bias[q];
                y.extend(prod[q * np + n * p..q * np + (n + 1) * p].iter().map(|&v| v + bias));
            }
        }
        Tensor4::from_vec(out, y)
    }

    pub fn backward(&self, grad_y: &Tensor4<T>, cache: &ConvCache<T>) -> Result<(Tensor4<T>, ConvGrads<T>)> {
        let x = &cache.input;
        let d = x.dims();
        let out = self.output_dims(d)?;
        if grad_y.dims() != out {
            return shape_err(format!("convolution gradient is {}, expected {out}", grad_y.dims()));
        }
        let p = out.h * out.w;
        let np = out.n * p;
        let k = self.fan_in();

        // Regroup grad_y from (n, q, p) into (q, n*p).
        let gy = grad_y.as_slice();
        let mut g = vec![T::zero(); self.c_out * np];
        for n in 0..out.n {
            for q in 0..self.c_out {
                let src = &gy[(n * self.c_out + q) * p..(n * self.c_out + q + 1) * p];
                g[q * np + n * p..q * np + (n + 1) * p].copy_from_slice(src);
            }
        }

        let bias: Vec<T> = (0..self.c_out).map(|q| g[q * np..(q + 1) * np].iter().copied().sum()).collect();

        let cols = self.im2col(x, out);
        // (K x N*P) * (N*P x c_out)
        let mut gw = vec![T::zero(); k * self.c_out];
        gemm(
            MatRef::row_major(&cols, k, np),
            MatRef::row_major(&g, self.c_out, np).t(),
            T::zero(),
            &mut gw,
        );
        drop(cols);

        // (K x c_out) * (c_out x N*P)
        let mut gcols = vec![T::zero(); k * np];
        gemm(
            MatRef::row_major(&self.weights, k, self.c_out),
            MatRef::row_major(&g, self.c_out, np),
            T::zero(),
            &mut gcols,
        );

        let (sh, sw) = self.stride;
        let mut gx = vec![T::zero(); d.len()];
        for a in 0..self.kh {
            for b in 0..self.kw {
                for c in 0..self.c_in {
                    let row = (a * self.kw + b) * self.c_in + c;
                    let src_row = &gcols[row * np..(row + 1) * np];
                    for n in 0..d.n {
                        for i in 0..out.h {
                            let dst_base = ((n * d.c + c) * d.h + i * sh + a) * d.w + b;
                            let src = &src_row[n * p + i * out.w..n * p + (i + 1) * out.w];
                            for (j, &v) in src.iter().enumerate() {
                                gx[dst_base + j * sw] = gx[dst_base + j * sw] + v;
                            }
                        }
                    }
                }
            }
        }

        Ok((Tensor4::from_vec(d, gx)?, ConvGrads { weights: gw, bias }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::test_util::{check_input_grad, check_param_grad, random_tensor, rng};
    use rand::Rng;

    /// Direct nested-loop cross-correlation, kept independent of the im2col path.
    fn oracle(x: &Tensor4<f64>, layer: &ConvLayer<f64>) -> Tensor4<f64> {
        let d = x.dims();
        let (sh, sw) = layer.stride;
        let oh = (d.h - layer.kh) / sh + 1;
        let ow = (d.w - layer.kw) / sw + 1;
        Tensor4::from_fn((d.n, layer.c_out, oh, ow), |n, q, i, j| {
            let mut acc = layer.bias[q];
            for c in 0..layer.c_in {
                for a in 0..layer.kh {
                    for b in 0..layer.kw {
                        acc += layer.weights[layer.weight_index(a, b, c, q)] * x.get(n, c, i * sh + a, j * sw + b);
                    }
                }
            }
            acc
        })
        .unwrap()
    }

    fn random_layer(r: &mut impl Rng, kh: usize, kw: usize, c_in: usize, c_out: usize, s: (usize, usize)) -> ConvLayer<f64> {
        let mut l = ConvLayer::new(kh, kw, c_in, c_out, s).unwrap();
        l.weights.iter_mut().for_each(|w| *w = r.gen_range(-1.0..1.0));
        l.bias.iter_mut().for_each(|b| *b = r.gen_range(-1.0..1.0));
        l
    }

    #[test]
    fn zero_input_zero_bias_layer_one() {
        let mut r = rng(1);
        let mut layer = random_layer(&mut r, 1, 15, 1, 48, (1, 1));
        layer.bias.iter_mut().for_each(|b| *b = 0.0);
        let x = Tensor4::zeros((1, 1, 6, 128)).unwrap();
        let (y, _) = layer.forward(&x).unwrap();
        assert_eq!(y.dims(), Dims::new(1, 48, 6, 114));
        assert!(y.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_filter_case() {
        let mut layer = ConvLayer::<f64>::new(1, 1, 1, 1, (1, 1)).unwrap();
        layer.weights[0] = 2.0;
        layer.bias[0] = 1.0;
        let x = Tensor4::from_vec((1, 1, 1, 3), vec![1.0, 2.0, 3.0]).unwrap();
        let (y, cache) = layer.forward(&x).unwrap();
        assert_eq!(y.as_slice(), &[3.0, 5.0, 7.0]);

        let gy = Tensor4::full(y.dims(), 1.0).unwrap();
        let (gx, grads) = layer.backward(&gy, &cache).unwrap();
        assert_eq!(grads.weights, vec![6.0]);
        assert_eq!(grads.bias, vec![3.0]);
        assert_eq!(gx.as_slice(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn zero_upstream_gradient() {
        let mut r = rng(2);
        let layer = random_layer(&mut r, 2, 3, 2, 3, (1, 1));
        let x = random_tensor(&mut r, Dims::new(2, 2, 4, 6));
        let (y, cache) = layer.forward(&x).unwrap();
        let (gx, g) = layer.backward(&Tensor4::zeros(y.dims()).unwrap(), &cache).unwrap();
        assert!(gx.as_slice().iter().all(|&v| v == 0.0));
        assert!(g.weights.iter().chain(&g.bias).all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_small_or_mismatched_input() {
        let layer = ConvLayer::<f32>::new(3, 15, 2, 4, (3, 1)).unwrap();
        assert!(layer.apply(&Tensor4::zeros((1, 2, 2, 20)).unwrap()).is_err());
        assert!(layer.apply(&Tensor4::zeros((1, 2, 3, 14)).unwrap()).is_err());
        assert!(layer.apply(&Tensor4::zeros((1, 1, 3, 15)).unwrap()).is_err());
        assert!(ConvLayer::<f32>::new(1, 1, 1, 1, (0, 1)).is_err());
    }

    #[test]
    fn output_size_formula() {
        let layer = ConvLayer::<f32>::new(1, 15, 1, 48, (1, 1)).unwrap();
        assert_eq!(layer.output_dims(Dims::new(1, 1, 6, 128)).unwrap(), Dims::new(1, 48, 6, 114));
        let fusion = ConvLayer::<f32>::new(3, 15, 96, 96, (3, 1)).unwrap();
        assert_eq!(fusion.output_dims(Dims::new(5, 96, 6, 21)).unwrap(), Dims::new(5, 96, 2, 7));
        assert_eq!(fusion.output_dims(Dims::new(5, 96, 18, 21)).unwrap(), Dims::new(5, 96, 6, 7));
    }

    #[test]
    fn matches_nested_loop_oracle() {
        let mut r = rng(3);
        for _ in 0..100 {
            let (kh, kw) = (r.gen_range(1..=3), r.gen_range(1..=3));
            let (c_in, c_out) = (r.gen_range(1..=3), r.gen_range(1..=3));
            let stride = (r.gen_range(1..=3), r.gen_range(1..=3));
            let dims = Dims::new(r.gen_range(1..=3), c_in, r.gen_range(kh..=6), r.gen_range(kw..=6));
            let layer = random_layer(&mut r, kh, kw, c_in, c_out, stride);
            let x = random_tensor(&mut r, dims);
            let got = layer.apply(&x).unwrap();
            let want = oracle(&x, &layer);
            assert_eq!(got.dims(), want.dims());
            for (g, w) in got.as_slice().iter().zip(want.as_slice()) {
                assert!((g - w).abs() <= 1e-12, "{g} vs {w}");
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut r = rng(4);
        for _ in 0..20 {
            let (kh, kw) = (r.gen_range(1..=3), r.gen_range(1..=3));
            let (c_in, c_out) = (r.gen_range(1..=3), r.gen_range(1..=3));
            let stride = (r.gen_range(1..=2), r.gen_range(1..=2));
            let dims = Dims::new(r.gen_range(1..=2), c_in, r.gen_range(kh..=5), r.gen_range(kw..=6));
            let layer = random_layer(&mut r, kh, kw, c_in, c_out, stride);
            let x = random_tensor(&mut r, dims);
            let (y, cache) = layer.forward(&x).unwrap();
            let probe = random_tensor(&mut r, y.dims());
            let (gx, grads) = layer.backward(&probe, &cache).unwrap();

            check_input_grad(&x, &gx, &probe, |x| layer.apply(x).unwrap());
            check_param_grad(&layer.weights, &grads.weights, &probe, |w| {
                let mut l = layer.clone();
                l.weights = w.to_vec();
                l.apply(&x).unwrap()
            });
            check_param_grad(&layer.bias, &grads.bias, &probe, |b| {
                let mut l = layer.clone();
                l.bias = b.to_vec();
                l.apply(&x).unwrap()
            });
        }
    }
}
