//! Rank-4 `[batch, channels, height, width]` tensors and their kernels.

pub mod conv;
pub mod io;
pub mod ops;

use std::fmt;

use crate::error::{Error, Result};
use crate::real::Real;

pub use conv::{ConvAlgo, ConvGeom};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape4 { n, c, h, w }
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn with_c(self, c: usize) -> Self {
        Shape4 { c, ..self }
    }

    pub fn with_n(self, n: usize) -> Self {
        Shape4 { n, ..self }
    }

    pub fn is_valid(&self) -> bool {
        self.n >= 1 && self.c >= 1 && self.h >= 1 && self.w >= 1
    }
}

impl From<[usize; 4]> for Shape4 {
    fn from(d: [usize; 4]) -> Self {
        Shape4::new(d[0], d[1], d[2], d[3])
    }
}

impl fmt::Display for Shape4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}, {}]", self.n, self.c, self.h, self.w)
    }
}

/// Dense row-major tensor. Values are always finite when built through
/// the checked constructors.
#[derive(Clone, PartialEq)]
pub struct Tensor4<T> {
    shape: Shape4,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor4<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<_> = self.data.iter().take(8).collect();
        f.debug_struct("Tensor4")
            .field("shape", &self.shape)
            .field("data[..8]", &preview)
            .finish()
    }
}

fn check_shape(shape: Shape4) -> Result<()> {
    if shape.is_valid() {
        Ok(())
    } else {
        Err(Error::dim("tensor", format!("all dims must be >= 1, got {shape}")))
    }
}

impl<T: Real> Tensor4<T> {
    pub fn zeros(shape: impl Into<Shape4>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: impl Into<Shape4>, value: T) -> Self {
        let shape = shape.into();
        check_shape(shape).expect("invalid tensor shape");
        Tensor4 {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    /// Checked constructor: length must match and every value must be finite.
    pub fn from_vec(shape: impl Into<Shape4>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        check_shape(shape)?;
        if data.len() != shape.numel() {
            return Err(Error::dim(
                "tensor",
                format!("data length {} does not match shape {shape}", data.len()),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite value {} at flat index {i}",
                data[i]
            )));
        }
        Ok(Tensor4 { shape, data })
    }

    /// Unchecked for finiteness; used by kernels whose outputs are checked
    /// separately.
    pub(crate) fn from_raw(shape: Shape4, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.numel(), data.len());
        Tensor4 { shape, data }
    }

    pub fn from_fn(shape: impl Into<Shape4>, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let shape = shape.into();
        check_shape(shape).expect("invalid tensor shape");
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Tensor4 { shape, data }
    }

    pub fn scalar(v: T) -> Self {
        Tensor4 {
            shape: Shape4::new(1, 1, 1, 1),
            data: vec![v],
        }
    }

    /// A `[1, len, 1, 1]` tensor, the storage convention for per-channel vectors.
    pub fn vector(values: Vec<T>) -> Result<Self> {
        let len = values.len();
        Self::from_vec(Shape4::new(1, len, 1, 1), values)
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        let s = self.shape;
        ((n * s.c + c) * s.h + y) * s.w + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.index(n, c, y, x)]
    }

    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: T) {
        let i = self.index(n, c, y, x);
        self.data[i] = v;
    }

    /// Contiguous `h*w` plane of one sample and channel.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &mut self.data[start..start + p]
    }

    /// All channels of one sample.
    pub fn sample_slice(&self, n: usize) -> &[T] {
        let len = self.shape.c * self.shape.plane();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn sample(&self, n: usize) -> Tensor4<T> {
        Tensor4 {
            shape: self.shape.with_n(1),
            data: self.sample_slice(n).to_vec(),
        }
    }

    pub fn reshape(self, shape: impl Into<Shape4>) -> Result<Self> {
        let shape = shape.into();
        check_shape(shape)?;
        if shape.numel() != self.data.len() {
            return Err(Error::dim(
                "reshape",
                format!("{} elements cannot take shape {shape}", self.data.len()),
            ));
        }
        Ok(Tensor4 { shape, data: self.data })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor4<U> {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&v| U::from_f64_lossy(v.as_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64()).sum()
    }

    pub fn max_value(&self) -> T {
        self.data
            .iter()
            .copied()
            .fold(T::neg_infinity(), |a, b| if b > a { b } else { a })
    }

    pub fn add_assign(&mut self, other: &Tensor4<T>) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// Channels `[start, start + len)` of every sample.
    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Self> {
        let s = self.shape;
        if len == 0 || start + len > s.c {
            return Err(Error::dim(
                "slice_channels",
                format!("range {start}..{} outside {} channels", start + len, s.c),
            ));
        }
        let p = s.plane();
        let mut data = Vec::with_capacity(s.n * len * p);
        for n in 0..s.n {
            let base = (n * s.c + start) * p;
            data.extend_from_slice(&self.data[base..base + len * p]);
        }
        Ok(Tensor4 {
            shape: s.with_c(len),
            data,
        })
    }

    /// Stack samples along the batch axis.
    pub fn stack(items: &[Tensor4<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::dim("stack", "no tensors to stack"))?;
        let s = first.shape;
        let mut data = Vec::with_capacity(s.numel() * items.len());
        let mut n = 0;
        for t in items {
            if t.shape.with_n(1) != s.with_n(1) {
                return Err(Error::dim("stack", format!("shape {} does not match {}", t.shape, s)));
            }
            n += t.shape.n;
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor4 {
            shape: s.with_n(n),
            data,
        })
    }

    /// Max of `|a - b| / max(|a|, |b|, floor)` over all elements.
    pub fn max_rel_diff(&self, other: &Tensor4<T>, floor: f64) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| {
                let (a, b) = (a.as_f64(), b.as_f64());
                (a - b).abs() / a.abs().max(b.abs()).max(floor)
            })
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_and_bad_lengths() {
        assert!(matches!(
            Tensor4::<f32>::from_vec([1, 1, 1, 2], vec![1.0, f32::NAN]),
            Err(Error::Numeric(_))
        ));
        assert!(matches!(
            Tensor4::<f32>::from_vec([1, 1, 1, 2], vec![1.0]),
            Err(Error::Dimension { .. })
        ));
        assert!(Tensor4::<f32>::from_vec([1, 0, 1, 1], vec![]).is_err());
    }

    #[test]
    fn row_major_indexing() {
        let t = Tensor4::<f64>::from_fn([2, 3, 4, 5], |n, c, y, x| (n * 1000 + c * 100 + y * 10 + x) as f64);
        assert_eq!(t.at(1, 2, 3, 4), 1234.0);
        assert_eq!(t.data()[t.index(1, 2, 3, 4)], 1234.0);
        assert_eq!(t.plane(1, 2)[3 * 5 + 4], 1234.0);
    }

    #[test]
    fn slice_and_stack() {
        let t = Tensor4::<f32>::from_fn([2, 4, 2, 2], |n, c, y, x| (n * 16 + c * 4 + y * 2 + x) as f32);
        let s = t.slice_channels(1, 2).unwrap();
        assert_eq!(s.shape(), Shape4::new(2, 2, 2, 2));
        assert_eq!(s.at(1, 0, 0, 0), t.at(1, 1, 0, 0));
        let st = Tensor4::stack(&[t.sample(0), t.sample(1)]).unwrap();
        assert_eq!(st, t);
        assert!(t.slice_channels(3, 2).is_err());
    }
}
