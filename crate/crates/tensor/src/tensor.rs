use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, TensorError};

/// Extents of a 4-D tensor in NCHW order.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape([usize; 4]);

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        let dims = [n, c, h, w];
        if dims.iter().any(|&d| d == 0) {
            return Err(TensorError::InvalidShape { shape: dims });
        }
        Ok(Shape(dims))
    }

    /// Shape of a scalar: `1×1×1×1`.
    pub const fn scalar() -> Self {
        Shape([1, 1, 1, 1])
    }

    pub(crate) const fn from_dims_unchecked(dims: [usize; 4]) -> Self {
        Shape(dims)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.0[0]
    }

    #[inline]
    pub fn c(&self) -> usize {
        self.0[1]
    }

    #[inline]
    pub fn h(&self) -> usize {
        self.0[2]
    }

    #[inline]
    pub fn w(&self) -> usize {
        self.0[3]
    }

    pub fn dims(&self) -> [usize; 4] {
        self.0
    }

    /// Number of pixels per plane (`h·w`).
    #[inline]
    pub fn plane(&self) -> usize {
        self.0[2] * self.0[3]
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.0[1] + c) * self.0[2] + y) * self.0[3] + x
    }

    pub(crate) fn with_c(self, c: usize) -> Self {
        Shape([self.0[0], c, self.0[2], self.0[3]])
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [n, c, h, w] = self.0;
        write!(f, "{n}×{c}×{h}×{w}")
    }
}

/// Scalar precision of a tensor.
///
/// Values are always held as `f64`; a `F32` tensor keeps every element
/// rounded to the nearest binary32 value, and convolutions on `F32` operands
/// accumulate in binary32.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum DType {
    F32,
    #[default]
    F64,
}

impl DType {
    /// Result precision of an operation mixing `self` and `other`.
    pub fn promote(self, other: DType) -> DType {
        if self == DType::F64 || other == DType::F64 {
            DType::F64
        } else {
            DType::F32
        }
    }

    #[inline]
    pub fn round(self, v: f64) -> f64 {
        match self {
            DType::F32 => v as f32 as f64,
            DType::F64 => v,
        }
    }

    pub(crate) fn round_slice(self, data: &mut [f64]) {
        if self == DType::F32 {
            for v in data {
                *v = *v as f32 as f64;
            }
        }
    }
}

/// Dense row-major NCHW tensor.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    dtype: DType,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, rounding the data to `dtype`.
    pub fn new(shape: Shape, dtype: DType, mut data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(TensorError::DataLength {
                shape: shape.dims(),
                expected: shape.numel(),
                found: data.len(),
            });
        }
        dtype.round_slice(&mut data);
        Ok(Tensor { shape, dtype, data })
    }

    /// Convenience constructor taking raw extents.
    pub fn from_vec(dims: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let shape = Shape::new(dims[0], dims[1], dims[2], dims[3])?;
        Tensor::new(shape, DType::F64, data)
    }

    pub(crate) fn from_raw(shape: Shape, dtype: DType, mut data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), shape.numel());
        dtype.round_slice(&mut data);
        Tensor { shape, dtype, data }
    }

    pub fn zeros(shape: Shape, dtype: DType) -> Self {
        Tensor {
            shape,
            dtype,
            data: vec![0.0; shape.numel()],
        }
    }

    pub fn full(shape: Shape, dtype: DType, value: f64) -> Self {
        Tensor {
            shape,
            dtype,
            data: vec![dtype.round(value); shape.numel()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::full(Shape::scalar(), DType::F64, value)
    }

    pub fn from_fn(
        shape: Shape,
        dtype: DType,
        mut f: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n() {
            for c in 0..shape.c() {
                for y in 0..shape.h() {
                    for x in 0..shape.w() {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Tensor::from_raw(shape, dtype, data)
    }

    /// Standard normal entries scaled by `std`.
    pub fn randn<R: Rng + ?Sized>(shape: Shape, dtype: DType, std: f64, rng: &mut R) -> Self {
        let data = (0..shape.numel())
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * std
            })
            .collect();
        Tensor::from_raw(shape, dtype, data)
    }

    /// Uniform entries in `[lo, hi)`.
    pub fn rand_uniform<R: Rng + ?Sized>(
        shape: Shape,
        dtype: DType,
        lo: f64,
        hi: f64,
        rng: &mut R,
    ) -> Self {
        let data = (0..shape.numel()).map(|_| rng.gen_range(lo..hi)).collect();
        Tensor::from_raw(shape, dtype, data)
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn dtype(&self) -> DType {
        self.dtype
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the buffer. Writers are responsible for keeping
    /// values representable in the tensor's dtype (see [`Tensor::round`]).
    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Re-rounds every element to the tensor's dtype.
    pub fn round(&mut self) {
        self.dtype.round_slice(&mut self.data);
    }

    pub fn to_dtype(&self, dtype: DType) -> Tensor {
        Tensor::from_raw(self.shape, dtype, self.data.clone())
    }

    pub fn reshape(&self, shape: Shape) -> Result<Tensor> {
        Tensor::new(shape, self.dtype, self.data.clone())
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.shape.offset(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: f64) {
        let i = self.shape.offset(n, c, y, x);
        self.data[i] = self.dtype.round(v);
    }

    /// The `h·w` plane of channel `c` in sample `n`.
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let p = self.shape.plane();
        let start = (n * self.shape.c() + c) * p;
        &self.data[start..start + p]
    }

    /// Value of a scalar tensor.
    pub fn item(&self) -> Result<f64> {
        if !self.shape.is_scalar() {
            return Err(TensorError::NotScalar {
                shape: self.shape.dims(),
            });
        }
        Ok(self.data[0])
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise map keeping shape and dtype.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_raw(self.shape, self.dtype, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Elementwise combination of two same-shaped tensors.
    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        ensure_same_shape("zip_map", self.shape, other.shape)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor::from_raw(
            self.shape,
            self.dtype.promote(other.dtype),
            data,
        ))
    }

    /// Adds `other` into `self` elementwise.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        ensure_same_shape("add_assign", self.shape, other.shape)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        self.round();
        Ok(())
    }

    /// Copies samples `[start, end)` of the batch into a new tensor.
    pub fn slice_batch(&self, start: usize, end: usize) -> Result<Tensor> {
        if start >= end || end > self.shape.n() {
            return Err(TensorError::invalid(
                "slice_batch",
                format!("range {start}..{end} outside batch of {}", self.shape.n()),
            ));
        }
        let per = self.shape.numel() / self.shape.n();
        let shape = Shape::new(end - start, self.shape.c(), self.shape.h(), self.shape.w())?;
        Ok(Tensor {
            shape,
            dtype: self.dtype,
            data: self.data[start * per..end * per].to_vec(),
        })
    }

    /// Stacks same-shaped tensors along the batch axis.
    pub fn stack_batch(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::invalid("stack_batch", "no tensors to stack"))?;
        let s = first.shape;
        let mut dtype = first.dtype;
        let mut n = 0;
        let mut data = Vec::new();
        for p in parts {
            if (p.shape.c(), p.shape.h(), p.shape.w()) != (s.c(), s.h(), s.w()) {
                return Err(TensorError::invalid(
                    "stack_batch",
                    format!("shape {:?} does not match {:?}", p.shape, s),
                ));
            }
            dtype = dtype.promote(p.dtype);
            n += p.shape.n();
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor::from_raw(Shape::new(n, s.c(), s.h(), s.w())?, dtype, data))
    }

    /// Mirrors every plane along the width axis.
    pub fn flip_horizontal(&self) -> Tensor {
        let s = self.shape;
        Tensor::from_fn(s, self.dtype, |n, c, y, x| self.at(n, c, y, s.w() - 1 - x))
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f64> = self.data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("dtype", &self.dtype)
            .field("head", &preview)
            .finish()
    }
}

pub(crate) fn ensure_same_shape(op: &'static str, a: Shape, b: Shape) -> Result<()> {
    const NAMES: [&str; 4] = ["batch", "channel", "height", "width"];
    for (i, name) in NAMES.iter().enumerate() {
        if a.0[i] != b.0[i] {
            return Err(TensorError::mismatch(op, name, a.0[i], b.0[i]));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_extent_is_rejected() {
        assert!(Shape::new(1, 0, 2, 2).is_err());
    }

    #[test]
    fn length_must_match_shape() {
        let err = Tensor::from_vec([1, 1, 2, 2], vec![1.0; 3]).unwrap_err();
        assert!(matches!(err, TensorError::DataLength { expected: 4, found: 3, .. }));
    }

    #[test]
    fn f32_values_are_rounded() {
        let t = Tensor::new(Shape::scalar(), DType::F32, vec![0.1]).unwrap();
        assert_eq!(t.data()[0], 0.1f32 as f64);
    }

    #[test]
    fn flip_is_an_involution() {
        let t = Tensor::from_fn(Shape::new(1, 2, 2, 3).unwrap(), DType::F64, |_, c, y, x| {
            (c * 10 + y * 3 + x) as f64
        });
        assert_eq!(t.flip_horizontal().at(0, 1, 1, 0), t.at(0, 1, 1, 2));
        assert_eq!(t.flip_horizontal().flip_horizontal(), t);
    }
}
