//! Dense real-valued tensors, the numeric kernels built on them, and a
//! reverse-mode differentiation tape.
//!
//! Everything is `f64` and row-major. Image-like tensors use the
//! `[N, C, H, W]` layout; single samples may be passed as `[C, H, W]`.

pub mod kernels;
pub mod tape;

use crate::error::{Error, Result};

pub use kernels::{avg_pool, batch_norm, conv2d, linear, BatchNormMode, RunningStats, BN_EPSILON, BN_MOMENTUM};
pub use tape::{softmax, Gradients, Tape, Var};

/// A shaped block of `f64` values in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking that the extents match the data length.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dim(
                "tensor",
                format!("shape {shape:?} holds {expected} values, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let len: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..len).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
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

    /// Same data under a new shape with the same element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.expect_same_shape(other, "elementwise")?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum() / self.data.len() as f64
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// True when every element is exactly `0.0` or `1.0`.
    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.expect_same_shape(other, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub(crate) fn expect_same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim(
                op,
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(())
    }

    /// Interprets the tensor as `[N, C, H, W]`, promoting `[C, H, W]` to `N = 1`.
    pub(crate) fn dims4(&self, op: &'static str) -> Result<[usize; 4]> {
        match *self.shape.as_slice() {
            [n, c, h, w] => Ok([n, c, h, w]),
            [c, h, w] => Ok([1, c, h, w]),
            _ => Err(Error::dim(
                op,
                format!("expected a [C,H,W] or [N,C,H,W] tensor, got {:?}", self.shape),
            )),
        }
    }

    /// Rows `start..start + len` along the leading axis.
    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Self> {
        let rows = *self
            .shape
            .first()
            .ok_or_else(|| Error::dim("slice_rows", "rank-0 tensor"))?;
        if start + len > rows {
            return Err(Error::dim(
                "slice_rows",
                format!("rows {start}..{} out of {rows}", start + len),
            ));
        }
        let stride = self.data.len() / rows.max(1);
        let mut shape = self.shape.clone();
        shape[0] = len;
        Ok(Self {
            shape,
            data: self.data[start * stride..(start + len) * stride].to_vec(),
        })
    }

    /// Concatenates tensors along the leading axis.
    pub fn concat_rows(parts: &[&Tensor]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("concat_rows", "no parts"))?;
        let tail = &first.shape[1..];
        let mut rows = 0;
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
        for p in parts {
            if p.shape.is_empty() || &p.shape[1..] != tail {
                return Err(Error::dim(
                    "concat_rows",
                    format!("{:?} vs {:?}", first.shape, p.shape),
                ));
            }
            rows += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = rows;
        Ok(Self { shape, data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mismatched_length() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn slice_and_concat_invert() {
        let t = Tensor::from_fn(&[4, 2, 3], |i| i as f64);
        let a = t.slice_rows(0, 1).unwrap();
        let b = t.slice_rows(1, 3).unwrap();
        assert_eq!(Tensor::concat_rows(&[&a, &b]).unwrap(), t);
        assert!(t.slice_rows(3, 2).is_err());
    }

    #[test]
    fn binary_detection() {
        assert!(Tensor::new(vec![3], vec![0.0, 1.0, 1.0]).unwrap().is_binary());
        assert!(!Tensor::new(vec![2], vec![0.0, 2.0]).unwrap().is_binary());
    }
}
