//! Dense row-major tensors.

use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense tensor with row-major storage.
///
/// Images are `C x H x W`; convolution kernels are `O x C x k x k`.
/// Every constructor and public operation guarantees finite entries.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
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

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::shape("tensor", "rank must be at least 1"));
    }
    if shape.contains(&0) {
        return Err(Error::shape(
            "tensor",
            format!("extents must be positive, got {shape:?}"),
        ));
    }
    Ok(shape.iter().product())
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {n} elements, got {}", data.len()),
            ));
        }
        Self {
            shape: shape.to_vec(),
            data,
        }
        .finite("from_vec")
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        let n = check_shape(shape)?;
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
        .finite("full")
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::one())
    }

    /// Builds a tensor whose invariants are known to hold (internal kernels).
    pub(crate) fn from_raw(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    /// Rejects non-finite entries produced by `op`.
    pub(crate) fn finite(self, op: &'static str) -> Result<Self> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(self)
        } else {
            Err(Error::NonFinite { op })
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// `(C, H, W)` of a rank-3 image tensor.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::shape(
                "image",
                format!("expected C x H x W, got {:?}", self.shape),
            )),
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != self.len() {
            return Err(Error::shape("reshape", format!("{:?} -> {shape:?}", self.shape)));
        }
        Ok(Self::from_raw(shape.to_vec(), self.data.clone()))
    }

    pub fn cast<U: Scalar>(&self) -> Result<Tensor<U>> {
        let data = self.data.iter().map(|&v| U::lit(v.as_f64())).collect();
        Tensor::from_raw(self.shape.clone(), data).finite("cast")
    }

    pub fn same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape == other.shape {
            Ok(())
        } else {
            Err(Error::shape(op, format!("{:?} vs {:?}", self.shape, other.shape)))
        }
    }

    pub fn map(&self, op: &'static str, f: impl Fn(T) -> T) -> Result<Self> {
        Self::from_raw(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect()).finite(op)
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.same_shape(other, op)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Self::from_raw(self.shape.clone(), data).finite(op)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, alpha: T) -> Result<Self> {
        self.map("scale", |v| v * alpha)
    }

    /// `alpha * self + beta * other`.
    pub fn lincomb(&self, alpha: T, other: &Self, beta: T) -> Result<Self> {
        self.zip_map(other, "lincomb", |a, b| alpha * a + beta * b)
    }

    /// Inner product, accumulated in `f64` in index order.
    pub fn inner(&self, other: &Self) -> Result<T> {
        self.same_shape(other, "inner")?;
        let s: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a.as_f64() * b.as_f64())
            .sum();
        Ok(T::lit(s))
    }

    pub fn sum(&self) -> T {
        T::lit(self.data.iter().map(|v| v.as_f64()).sum())
    }

    pub fn norm_sq(&self) -> T {
        T::lit(self.data.iter().map(|v| v.as_f64() * v.as_f64()).sum())
    }

    pub fn norm(&self) -> T {
        self.norm_sq().sqrt()
    }

    pub fn norm_inf(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// `max |a_i - b_i|`.
    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }

    /// Channel `c` of a `C x H x W` tensor as a `1 x H x W` tensor.
    pub fn channel(&self, c: usize) -> Result<Self> {
        let (ch, h, w) = self.chw()?;
        if c >= ch {
            return Err(Error::shape("channel", format!("index {c} of {ch}")));
        }
        let plane = h * w;
        Ok(Self::from_raw(
            vec![1, h, w],
            self.data[c * plane..(c + 1) * plane].to_vec(),
        ))
    }

    /// `[C x H x W]` sub-window starting at `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        let (c, h, w) = self.chw()?;
        if height == 0 || width == 0 || top + height > h || left + width > w {
            return Err(Error::shape(
                "crop",
                format!("window {height}x{width}@({top},{left}) outside {h}x{w}"),
            ));
        }
        let mut data = Vec::with_capacity(c * height * width);
        for ch in 0..c {
            for y in top..top + height {
                let row = ch * h * w + y * w;
                data.extend_from_slice(&self.data[row + left..row + left + width]);
            }
        }
        Ok(Self::from_raw(vec![c, height, width], data))
    }

    /// Pads a `C x H x W` tensor with half-sample-symmetric reflection
    /// (edge pixel repeated) on the bottom and right.
    pub fn pad_reflect(&self, bottom: usize, right: usize) -> Result<Self> {
        let (c, h, w) = self.chw()?;
        if bottom > h || right > w {
            return Err(Error::shape("pad_reflect", "padding exceeds extent"));
        }
        let (nh, nw) = (h + bottom, w + right);
        let reflect = |i: usize, n: usize| if i < n { i } else { 2 * n - 1 - i };
        let mut data = Vec::with_capacity(c * nh * nw);
        for ch in 0..c {
            for y in 0..nh {
                let sy = reflect(y, h);
                for x in 0..nw {
                    data.push(self.data[ch * h * w + sy * w + reflect(x, w)]);
                }
            }
        }
        Ok(Self::from_raw(vec![c, nh, nw], data))
    }

    /// Channel concatenation of `C1 x H x W` and `C2 x H x W`.
    pub fn concat_channels(&self, other: &Self) -> Result<Self> {
        let (c1, h1, w1) = self.chw()?;
        let (c2, h2, w2) = other.chw()?;
        if (h1, w1) != (h2, w2) {
            return Err(Error::shape("concat", format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Self::from_raw(vec![c1 + c2, h1, w1], data))
    }

    /// Splits channels at `c1`: inverse of [`Tensor::concat_channels`].
    pub fn split_channels(&self, c1: usize) -> Result<(Self, Self)> {
        let (c, h, w) = self.chw()?;
        if c1 == 0 || c1 >= c {
            return Err(Error::shape("split_channels", format!("split {c1} of {c}")));
        }
        let at = c1 * h * w;
        Ok((
            Self::from_raw(vec![c1, h, w], self.data[..at].to_vec()),
            Self::from_raw(vec![c - c1, h, w], self.data[at..].to_vec()),
        ))
    }
}

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes_and_values() {
        assert!(Tensor::<f64>::from_vec(&[2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::<f64>::from_vec(&[0, 2], vec![]).is_err());
        assert!(matches!(
            Tensor::<f64>::from_vec(&[2], vec![1.0, f64::NAN]),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn overflow_is_an_error() {
        let a = Tensor::<f32>::full(&[2], f32::MAX).unwrap();
        assert!(matches!(a.add(&a), Err(Error::NonFinite { op: "add" })));
    }

    #[test]
    fn concat_split_roundtrip() {
        let a = Tensor::<f64>::from_vec(&[1, 1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::<f64>::from_vec(&[2, 1, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        let c = a.concat_channels(&b).unwrap();
        assert_eq!(c.shape(), &[3, 1, 2]);
        let (x, y) = c.split_channels(1).unwrap();
        assert_eq!((x, y), (a, b));
    }

    #[test]
    fn crop_and_reflect_pad() {
        let t = Tensor::<f64>::from_vec(&[1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let p = t.pad_reflect(1, 2).unwrap();
        assert_eq!(p.shape(), &[1, 3, 5]);
        assert_eq!(&p.data()[..5], &[1.0, 2.0, 3.0, 3.0, 2.0]);
        assert_eq!(&p.data()[10..], &[4.0, 5.0, 6.0, 6.0, 5.0]);
        assert_eq!(p.crop(0, 0, 2, 3).unwrap(), t);
    }
}
