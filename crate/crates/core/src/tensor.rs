//! Dense row-major tensors.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Contiguous row-major buffer with its shape.
///
/// A rank-0 tensor (empty shape) holds a single element.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: &[usize], data: Vec<S>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::Shape { op: "tensor", lhs: shape.to_vec(), rhs: vec![data.len()] });
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, S::zero())
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![value; numel(shape)] }
    }

    pub fn scalar(value: S) -> Self {
        Tensor { shape: Vec::new(), data: vec![value] }
    }

    /// Builds a tensor from `f64` values, converting to `S`.
    pub fn from_f64(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::new(shape, values.iter().map(|&v| S::of(v)).collect())
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

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// Same data under a new shape with the same element count.
    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.data.len() {
            return Err(Error::Shape { op: "reshape", lhs: self.shape, rhs: shape.to_vec() });
        }
        Ok(Tensor { shape: shape.to_vec(), data: self.data })
    }

    /// The single element of a one-element tensor.
    pub fn item(&self) -> Option<S> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    /// Swaps the last two axes of a rank-3 tensor.
    pub fn transpose_last2(&self) -> Result<Self> {
        let [b, s, c] = rank3(&self.shape, "transpose")?;
        let mut out = vec![S::zero(); self.data.len()];
        transpose_into(&self.data, &mut out, b, s, c);
        Ok(Tensor { shape: vec![b, c, s], data: out })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Converts element type, e.g. to evaluate an `f32` model in `f64`.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| T::of(v.as_f64())).collect() }
    }
}

pub(crate) fn rank3(shape: &[usize], op: &'static str) -> Result<[usize; 3]> {
    match *shape {
        [a, b, c] => Ok([a, b, c]),
        _ => Err(Error::Rank { op, expected: 3, shape: shape.to_vec() }),
    }
}

/// `out[b][c][s] = src[b][s][c]`
pub(crate) fn transpose_into<S: Copy>(src: &[S], out: &mut [S], batch: usize, rows: usize, cols: usize) {
    let plane = rows * cols;
    for (src, out) in src.chunks_exact(plane).zip(out.chunks_exact_mut(plane)).take(batch) {
        for r in 0..rows {
            for c in 0..cols {
                out[c * rows + r] = src[r * cols + c];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::<f64>::new(&[2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::<f64>::new(&[2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(t.len(), 6);
        assert!(t.clone().reshape(&[3, 2]).is_ok());
        assert!(t.reshape(&[4]).is_err());
    }

    #[test]
    fn scalar_is_rank_zero() {
        let s = Tensor::scalar(3.0f32);
        assert_eq!(s.rank(), 0);
        assert_eq!(s.item(), Some(3.0));
    }

    #[test]
    fn transpose_twice_is_identity() {
        let t = Tensor::<f64>::new(&[2, 3, 4], (0..24).map(|v| v as f64).collect()).unwrap();
        let tt = t.transpose_last2().unwrap();
        assert_eq!(tt.shape(), &[2, 4, 3]);
        assert_eq!(tt.data()[1], 4.0);
        assert_eq!(tt.transpose_last2().unwrap(), t);
    }
}
