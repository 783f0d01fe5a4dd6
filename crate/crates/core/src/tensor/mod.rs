//! Dense `f64` tensors and the reverse-mode tape that differentiates them.
//!
//! A [`Tensor`] is a plain value: a shape and a row-major buffer. Gradient
//! bookkeeping lives on a [`Tape`], which records every operation applied to
//! the variables it owns and replays the backward rules in reverse order.

mod kernels;
pub(crate) mod serialize;
mod tape;

pub use kernels::{bilinear_kernel, conv2d_output_size, pool_output_size};
pub use serialize::{read_tensor, write_tensor, TENSOR_MAGIC, TENSOR_VERSION};
pub use tape::{Gradients, Tape, Var};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} holds {n} values but {} were supplied", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Tensor::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: Vec::new(), data: vec![value] }
    }

    /// Samples i.i.d. normal entries with the given standard deviation.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std).expect("standard deviation must be finite and >= 0");
        let n = shape.iter().product();
        let data = (0..n).map(|_| normal.sample(rng)).collect();
        Tensor { shape: shape.to_vec(), data }
    }

    /// Samples i.i.d. uniform entries in `[lo, hi)`.
    pub fn rand_uniform<R: Rng + ?Sized>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    /// Value of a rank-0 or single-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    /// Same buffer under a new shape with the same element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Tensor::new(shape.to_vec(), self.data.clone())
    }

    /// Unpacks a rank-4 shape as `(n, c, h, w)`.
    pub fn dims4(&self) -> Result<[usize; 4]> {
        match self.shape[..] {
            [n, c, h, w] => Ok([n, c, h, w]),
            _ => Err(Error::shape("dims4", format!("expected rank 4, got shape {:?}", self.shape))),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Elementwise `self + alpha * other`, in place.
    pub fn add_scaled(&mut self, other: &Tensor, alpha: f64) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    /// Extracts batch item `n` of a rank-4 tensor as a `[1, C, H, W]` tensor.
    pub fn batch_item(&self, n: usize) -> Result<Tensor> {
        let [batch, c, h, w] = self.dims4()?;
        if n >= batch {
            return Err(Error::invalid(format!("batch index {n} out of range for batch of {batch}")));
        }
        let plane = c * h * w;
        Ok(Tensor { shape: vec![1, c, h, w], data: self.data[n * plane..(n + 1) * plane].to_vec() })
    }

    /// Concatenates `[1, C, H, W]` (or `[k, C, H, W]`) tensors along the batch axis.
    pub fn stack_batch(items: &[Tensor]) -> Result<Tensor> {
        let first = items.first().ok_or_else(|| Error::invalid("cannot stack an empty batch"))?;
        let [_, c, h, w] = first.dims4()?;
        let mut n = 0;
        let mut data = Vec::new();
        for t in items {
            let [tn, tc, th, tw] = t.dims4()?;
            if (tc, th, tw) != (c, h, w) {
                return Err(Error::shape(
                    "stack_batch",
                    format!("item shape {:?} differs from {:?}", t.shape, first.shape),
                ));
            }
            n += tn;
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor { shape: vec![n, c, h, w], data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_shape() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn scalar_has_rank_zero() {
        let s = Tensor::scalar(2.5);
        assert_eq!(s.rank(), 0);
        assert_eq!(s.item(), Some(2.5));
    }

    #[test]
    fn batch_roundtrip() {
        let a = Tensor::new(vec![1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(vec![1, 1, 1, 2], vec![3.0, 4.0]).unwrap();
        let ab = Tensor::stack_batch(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(ab.shape(), &[2, 1, 1, 2]);
        assert_eq!(ab.batch_item(1).unwrap(), b);
        assert_eq!(ab.batch_item(0).unwrap(), a);
    }
}
