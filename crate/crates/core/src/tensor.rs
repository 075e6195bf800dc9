use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{shape_err, Error, Result};
use crate::real::Real;

/// Up to four dimensions; images are rank 3 `(height, width, channels)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    dims: [usize; 4],
    rank: u8,
}

impl Shape {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.len() > 4 {
            return Err(shape_err!("rank {} exceeds 4", dims.len()));
        }
        let mut d = [0usize; 4];
        d[..dims.len()].copy_from_slice(dims);
        Ok(Shape { dims: d, rank: dims.len() as u8 })
    }

    pub const fn scalar() -> Self {
        Shape { dims: [0; 4], rank: 0 }
    }

    pub const fn vector(n: usize) -> Self {
        Shape { dims: [n, 0, 0, 0], rank: 1 }
    }

    pub const fn image(h: usize, w: usize, c: usize) -> Self {
        Shape { dims: [h, w, c, 0], rank: 3 }
    }

    pub const fn kernel(kh: usize, kw: usize, cin: usize, cout: usize) -> Self {
        Shape { dims: [kh, kw, cin, cout], rank: 4 }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims[..self.rank as usize]
    }

    pub fn rank(&self) -> usize {
        self.rank as usize
    }

    pub fn numel(&self) -> usize {
        self.dims().iter().product()
    }

    /// `(h, w, c)` of a rank-3 shape.
    pub fn hwc(&self) -> Result<(usize, usize, usize)> {
        if self.rank != 3 {
            return Err(shape_err!("expected an image (h, w, c), got {:?}", self));
        }
        Ok((self.dims[0], self.dims[1], self.dims[2]))
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.dims())
    }
}

/// Dense row-major tensor. Images are channels-last `(h, w, c)`.
#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        Tensor { shape, data: vec![T::zero(); shape.numel()] }
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Tensor { shape, data: vec![value; shape.numel()] }
    }

    pub fn scalar(value: T) -> Self {
        Tensor { shape: Shape::scalar(), data: vec![value] }
    }

    /// Builds a tensor, rejecting length mismatches and non-finite values.
    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(shape_err!("{} values for shape {:?}", data.len(), shape));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(alloc::format!("element {i}")));
        }
        Ok(Tensor { shape, data })
    }

    pub fn image(h: usize, w: usize, c: usize, data: Vec<T>) -> Result<Self> {
        Self::from_vec(Shape::image(h, w, c), data)
    }

    /// Image whose value at `(y, x, c)` is `f(y, x, c)`.
    pub fn from_fn(h: usize, w: usize, c: usize, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(h * w * c);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    data.push(f(y, x, ch));
                }
            }
        }
        Tensor { shape: Shape::image(h, w, c), data }
    }

    /// Internal constructor for kernels that already guarantee the length.
    pub(crate) fn from_parts(shape: Shape, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.numel(), data.len());
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn hwc(&self) -> Result<(usize, usize, usize)> {
        self.shape.hwc()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Single value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() != 1 {
            return Err(shape_err!("item() on tensor of shape {:?}", self.shape));
        }
        Ok(self.data[0])
    }

    /// Element of a rank-3 image; panics when out of range.
    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> T {
        let d = self.shape.dims;
        self.data[(y * d[1] + x) * d[2] + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: T) {
        let d = self.shape.dims;
        self.data[(y * d[1] + x) * d[2] + c] = v;
    }

    pub fn reshape(self, shape: Shape) -> Result<Self> {
        if shape.numel() != self.data.len() {
            return Err(shape_err!("cannot reshape {:?} into {:?}", self.shape, shape));
        }
        Ok(Tensor { shape, data: self.data })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(Tensor {
            shape: self.shape,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor { shape: self.shape, data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect() }
    }

    pub fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(shape_err!("shape mismatch {:?} vs {:?}", self.shape, other.shape));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_f64(self.data.len() as f64)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn clamp(&self, lo: T, hi: T) -> Self {
        self.map(|v| v.max(lo).min(hi))
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Single channel `c` of an image as an `(h, w, 1)` image.
    pub fn channel(&self, c: usize) -> Result<Self> {
        let (h, w, ch) = self.hwc()?;
        if c >= ch {
            return Err(shape_err!("channel {c} out of range for {ch} channels"));
        }
        Ok(Self::from_fn(h, w, 1, |y, x, _| self.at(y, x, c)))
    }

    /// Rectangular window of an image.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Self> {
        let (ih, iw, c) = self.hwc()?;
        if top + h > ih || left + w > iw || h == 0 || w == 0 {
            return Err(shape_err!("crop {h}x{w} at ({top},{left}) outside {ih}x{iw}"));
        }
        Ok(Self::from_fn(h, w, c, |y, x, ch| self.at(top + y, left + x, ch)))
    }
}
