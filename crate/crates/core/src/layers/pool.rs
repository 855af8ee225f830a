use crate::error::{shape_err, Result};
use crate::tensor::{Dims, Scalar, Tensor4};

/// Max-pooling window and stride as `(height, width)` pairs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pool2 {
    pub window: (usize, usize),
    pub stride: (usize, usize),
}

impl Default for Pool2 {
    /// The `(1,2)` window with `(1,2)` stride used between convolutions.
    fn default() -> Self {
        Pool2 { window: (1, 2), stride: (1, 2) }
    }
}

impl Pool2 {
    pub fn output_dims(&self, input: Dims) -> Result<Dims> {
        let (ph, pw) = self.window;
        let (sh, sw) = self.stride;
        if ph == 0 || pw == 0 || sh == 0 || sw == 0 {
            return shape_err(format!("degenerate pooling {self:?}"));
        }
        if input.h < ph || input.w < pw {
            return shape_err(format!("input {input} is smaller than the pooling window {:?}", self.window));
        }
        Ok(Dims { h: (input.h - ph) / sh + 1, w: (input.w - pw) / sw + 1, ..input })
    }
}

/// Flat input offset of every output's maximum.
#[derive(Clone, Debug)]
pub struct MaxPoolCache {
    input: Dims,
    argmax: Vec<usize>,
}

/// Windows that do not fit (e.g. a trailing odd column) are dropped; ties
/// resolve to the earliest position in the window.
pub fn maxpool_forward<T: Scalar>(x: &Tensor4<T>, pool: Pool2) -> Result<(Tensor4<T>, MaxPoolCache)> {
    let d = x.dims();
    let out = pool.output_dims(d)?;
    let src = x.as_slice();
    let mut y = Vec::with_capacity(out.len());
    let mut argmax = Vec::with_capacity(out.len());
    for nc in 0..d.n * d.c {
        let plane = nc * d.h * d.w;
        for i in 0..out.h {
            for j in 0..out.w {
                let mut best = plane + (i * pool.stride.0) * d.w + j * pool.stride.1;
                for a in 0..pool.window.0 {
                    for b in 0..pool.window.1 {
                        let off = plane + (i * pool.stride.0 + a) * d.w + j * pool.stride.1 + b;
                        if src[off] > src[best] {
                            best = off;
                        }
                    }
                }
                y.push(src[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor4::from_vec(out, y)?, MaxPoolCache { input: d, argmax }))
}

pub fn maxpool_backward<T: Scalar>(grad_y: &Tensor4<T>, cache: &MaxPoolCache) -> Result<Tensor4<T>> {
    if grad_y.len() != cache.argmax.len() {
        return shape_err(format!("max-pool gradient {} does not match its cache", grad_y.dims()));
    }
    let mut gx = vec![T::zero(); cache.input.len()];
    for (&g, &src) in grad_y.as_slice().iter().zip(&cache.argmax) {
        gx[src] = gx[src] + g;
    }
    Tensor4::from_vec(cache.input, gx)
}

#[derive(Clone, Debug)]
pub struct GapCache {
    input: Dims,
}

/// Global average pooling: every `(h, w)` plane collapses to its mean.
pub fn gap_forward<T: Scalar>(x: &Tensor4<T>) -> (Tensor4<T>, GapCache) {
    let d = x.dims();
    let area = d.h * d.w;
    let scale = T::from_usize(area).expect("plane size");
    let data = x.as_slice().chunks_exact(area).map(|plane| plane.iter().copied().sum::<T>() / scale).collect();
    let y = Tensor4::from_vec((d.n, d.c, 1, 1), data).expect("gap output shape");
    (y, GapCache { input: d })
}

pub fn gap_backward<T: Scalar>(grad_y: &Tensor4<T>, cache: &GapCache) -> Result<Tensor4<T>> {
    let d = cache.input;
    if grad_y.dims() != Dims::new(d.n, d.c, 1, 1) {
        return shape_err(format!("average-pool gradient {} does not match input {d}", grad_y.dims()));
    }
    let area = d.h * d.w;
    let scale = T::from_usize(area).expect("plane size");
    let mut gx = Vec::with_capacity(d.len());
    for &g in grad_y.as_slice() {
        gx.extend(std::iter::repeat_n(g / scale, area));
    }
    Tensor4::from_vec(d, gx)
}
