//! Dense rank-4 arrays laid out row-major in `(n, c, h, w)` order.

use std::fmt;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{shape_err, Error, Result};

/// Element precision of a tensor, model or checkpoint payload.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn bits(self) -> u32 {
        match self {
            Precision::F32 => 32,
            Precision::F64 => 64,
        }
    }

    pub fn from_bits(bits: u32) -> Option<Self> {
        match bits {
            32 => Some(Precision::F32),
            64 => Some(Precision::F64),
            _ => None,
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.bits())
    }
}

/// Floating-point element type. Implemented for `f32` and `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Sum + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    const PRECISION: Precision;

    fn from_f64_lossy(v: f64) -> Self;

    fn write_le(self, out: &mut Vec<u8>);

    /// Reads one value from exactly `PRECISION.bits() / 8` little-endian bytes.
    fn read_le(bytes: &[u8]) -> Self;

    /// `c = alpha * a * b + beta * c` for strided row/column-addressed matrices.
    ///
    /// # Safety
    ///
    /// Every address implied by the dimensions and strides must be in bounds.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f32 {
    const PRECISION: Precision = Precision::F32;

    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Scalar for f64 {
    const PRECISION: Precision = Precision::F64;

    fn from_f64_lossy(v: f64) -> Self {
        v
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// A strided view of a matrix stored in a slice.
#[derive(Clone, Copy, Debug)]
pub(crate) struct MatRef<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a, T> MatRef<'a, T> {
    pub fn row_major(data: &'a [T], rows: usize, cols: usize) -> Self {
        MatRef { data, rows, cols, row_stride: cols, col_stride: 1 }
    }

    pub fn t(self) -> Self {
        MatRef {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
        }
    }

    fn max_offset(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            return 0;
        }
        (self.rows - 1) * self.row_stride + (self.cols - 1) * self.col_stride
    }
}

/// `out (row-major, a.rows x b.cols) = a * b + beta * out`.
pub(crate) fn gemm<T: Scalar>(a: MatRef<'_, T>, b: MatRef<'_, T>, beta: T, out: &mut [T]) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert_eq!(out.len(), m * n, "gemm output length");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        out.iter_mut().for_each(|v| *v = *v * beta);
        return;
    }
    assert!(a.max_offset() < a.data.len(), "gemm lhs out of bounds");
    assert!(b.max_offset() < b.data.len(), "gemm rhs out of bounds");
    // SAFETY: all three operands were bounds-checked above.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Extents of a rank-4 tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Dims { n, c, h, w }
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements per batch item.
    pub fn item_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    fn extent(&self, axis: Axis) -> usize {
        match axis {
            Axis::N => self.n,
            Axis::C => self.c,
            Axis::H => self.h,
            Axis::W => self.w,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().contains(&0) {
            return shape_err(format!("all extents must be >= 1, got {self}"));
        }
        Ok(())
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.n, self.c, self.h, self.w)
    }
}

impl From<(usize, usize, usize, usize)> for Dims {
    fn from((n, c, h, w): (usize, usize, usize, usize)) -> Self {
        Dims { n, c, h, w }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    N,
    C,
    H,
    W,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
    Max,
}

/// Dense rank-4 tensor. Element `(i, j, k, l)` lives at `((i*c + j)*h + k)*w + l`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4<T> {
    dims: Dims,
    data: Vec<T>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn zeros(dims: impl Into<Dims>) -> Result<Self> {
        Self::full(dims, T::zero())
    }

    pub fn full(dims: impl Into<Dims>, value: T) -> Result<Self> {
        let dims = dims.into();
        dims.validate()?;
        Ok(Tensor4 { dims, data: vec![value; dims.len()] })
    }

    pub fn from_vec(dims: impl Into<Dims>, data: Vec<T>) -> Result<Self> {
        let dims = dims.into();
        dims.validate()?;
        if data.len() != dims.len() {
            return shape_err(format!(
                "buffer of {} values does not fill {dims} ({} values)",
                data.len(),
                dims.len()
            ));
        }
        Ok(Tensor4 { dims, data })
    }

    pub fn from_fn(dims: impl Into<Dims>, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Result<Self> {
        let dims = dims.into();
        dims.validate()?;
        let mut data = Vec::with_capacity(dims.len());
        for i in 0..dims.n {
            for j in 0..dims.c {
                for k in 0..dims.h {
                    for l in 0..dims.w {
                        data.push(f(i, j, k, l));
                    }
                }
            }
        }
        Ok(Tensor4 { dims, data })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn offset(&self, i: usize, j: usize, k: usize, l: usize) -> usize {
        let d = self.dims;
        debug_assert!(i < d.n && j < d.c && k < d.h && l < d.w);
        ((i * d.c + j) * d.h + k) * d.w + l
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> T {
        self.data[self.offset(i, j, k, l)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, l: usize, value: T) {
        let off = self.offset(i, j, k, l);
        self.data[off] = value;
    }

    /// Contiguous slice of one batch item.
    pub fn item(&self, i: usize) -> &[T] {
        let len = self.dims.item_len();
        &self.data[i * len..(i + 1) * len]
    }

    /// Same buffer viewed with different extents of equal total size.
    pub fn reshape(self, dims: impl Into<Dims>) -> Result<Self> {
        Self::from_vec(dims, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor4 { dims: self.dims, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn map_binary(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.dims != other.dims {
            return shape_err(format!("elementwise operands differ: {} vs {}", self.dims, other.dims));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Tensor4 { dims: self.dims, data })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.map_binary(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.map_binary(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.map_binary(other, |a, b| a * b)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    /// Reduces over `axes`; each reduced axis keeps extent 1.
    pub fn reduce(&self, axes: &[Axis], kind: Reduction) -> Result<Self> {
        let d = self.dims;
        let keep = |axis: Axis| !axes.contains(&axis);
        let out_dims = Dims {
            n: if keep(Axis::N) { d.n } else { 1 },
            c: if keep(Axis::C) { d.c } else { 1 },
            h: if keep(Axis::H) { d.h } else { 1 },
            w: if keep(Axis::W) { d.w } else { 1 },
        };
        let init = match kind {
            Reduction::Sum | Reduction::Mean => T::zero(),
            Reduction::Max => T::neg_infinity(),
        };
        let mut out = Tensor4::full(out_dims, init)?;
        for i in 0..d.n {
            for j in 0..d.c {
                for k in 0..d.h {
                    for l in 0..d.w {
                        let v = self.get(i, j, k, l);
                        let o = out.offset(
                            if keep(Axis::N) { i } else { 0 },
                            if keep(Axis::C) { j } else { 0 },
                            if keep(Axis::H) { k } else { 0 },
                            if keep(Axis::W) { l } else { 0 },
                        );
                        let slot = &mut out.data[o];
                        *slot = match kind {
                            Reduction::Sum | Reduction::Mean => *slot + v,
                            Reduction::Max => slot.max(v),
                        };
                    }
                }
            }
        }
        if kind == Reduction::Mean {
            let count: usize = [Axis::N, Axis::C, Axis::H, Axis::W]
                .into_iter()
                .filter(|a| !keep(*a))
                .map(|a| d.extent(a))
                .product();
            let count = T::from_usize(count).expect("extent fits in a float");
            out.data.iter_mut().for_each(|v| *v = *v / count);
        }
        Ok(out)
    }

    /// Element-wise conversion to another precision.
    pub fn cast<U: Scalar>(&self) -> Tensor4<U> {
        Tensor4 {
            dims: self.dims,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64().expect("float to f64")))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Gathers batch items `indices` into a new tensor.
    pub fn gather(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return shape_err("cannot gather an empty batch");
        }
        let mut data = Vec::with_capacity(indices.len() * self.dims.item_len());
        for &i in indices {
            if i >= self.dims.n {
                return Err(Error::Usage(format!("batch index {i} out of range for {}", self.dims)));
            }
            data.extend_from_slice(self.item(i));
        }
        Self::from_vec(Dims { n: indices.len(), ..self.dims }, data)
    }
}
