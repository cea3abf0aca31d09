use std::ops::Range;

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TensorError {
    #[error("data length {actual} does not match shape {shape:?} (expects {expected})")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("shape {0:?} has a zero dimension")]
    ZeroDim(Vec<usize>),
    #[error("operation needs at least a rank-{needed} tensor, got shape {shape:?}")]
    Rank { needed: usize, shape: Vec<usize> },
    #[error("row range {start}..{end} outside batch of {batch}")]
    RowRange { start: usize, end: usize, batch: usize },
    #[error("cannot join tensors of shapes {left:?} and {right:?} along axis 1")]
    Join { left: Vec<usize>, right: Vec<usize> },
    #[error("split widths {widths:?} do not cover axis 1 of shape {shape:?}")]
    SplitWidths { widths: Vec<usize>, shape: Vec<usize> },
}

/// Dense row-major n-dimensional array. Axis 0 is the batch axis wherever a
/// batch is implied.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, TensorError> {
        if shape.iter().any(|&d| d == 0) {
            return Err(TensorError::ZeroDim(shape));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::DataLength {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self, TensorError> {
        let n = shape.iter().product();
        Self::new(shape, vec![T::zero(); n])
    }

    /// Builds a `[rows.len(), cols]` matrix from nested rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self, TensorError> {
        let cols = rows.first().map_or(0, Vec::len);
        let data: Vec<T> = rows.iter().flatten().copied().collect();
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Size of axis 0.
    pub fn batch(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Number of elements in one entry along axis 0.
    pub fn sample_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64_lossless()))
                .collect(),
        }
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self, TensorError> {
        Self::new(shape, self.data)
    }

    /// Contiguous rows `range` along axis 0.
    pub fn rows(&self, range: Range<usize>) -> Result<Self, TensorError> {
        let batch = self.batch();
        if self.rank() == 0 || range.start >= range.end || range.end > batch {
            return Err(TensorError::RowRange {
                start: range.start,
                end: range.end,
                batch,
            });
        }
        let len = self.sample_len();
        let mut shape = self.shape.clone();
        shape[0] = range.len();
        Self::new(shape, self.data[range.start * len..range.end * len].to_vec())
    }

    /// Gathers the given rows along axis 0, in order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self, TensorError> {
        let batch = self.batch();
        let len = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            if i >= batch {
                return Err(TensorError::RowRange {
                    start: i,
                    end: i + 1,
                    batch,
                });
            }
            data.extend_from_slice(&self.data[i * len..(i + 1) * len]);
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Self::new(shape, data)
    }

    /// Concatenation along axis 1. All parts share every other dimension.
    pub fn concat_axis1(parts: &[&Tensor<T>]) -> Result<Self, TensorError> {
        let first = parts.first().ok_or(TensorError::Rank {
            needed: 2,
            shape: vec![],
        })?;
        if first.rank() < 2 {
            return Err(TensorError::Rank {
                needed: 2,
                shape: first.shape.clone(),
            });
        }
        let mut axis1 = 0;
        for p in parts {
            if p.rank() != first.rank()
                || p.shape[0] != first.shape[0]
                || p.shape[2..] != first.shape[2..]
            {
                return Err(TensorError::Join {
                    left: first.shape.clone(),
                    right: p.shape.clone(),
                });
            }
            axis1 += p.shape[1];
        }
        let batch = first.shape[0];
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.numel()).sum());
        for b in 0..batch {
            for p in parts {
                let len = p.sample_len();
                data.extend_from_slice(&p.data[b * len..(b + 1) * len]);
            }
        }
        let mut shape = first.shape.clone();
        shape[1] = axis1;
        Self::new(shape, data)
    }

    /// Inverse of [`Tensor::concat_axis1`]: slices axis 1 into the given widths.
    pub fn split_axis1(&self, widths: &[usize]) -> Result<Vec<Self>, TensorError> {
        if self.rank() < 2 || widths.iter().sum::<usize>() != self.shape[1] {
            return Err(TensorError::SplitWidths {
                widths: widths.to_vec(),
                shape: self.shape.clone(),
            });
        }
        let inner: usize = self.shape[2..].iter().product();
        let row = self.sample_len();
        let mut out: Vec<Vec<T>> = widths
            .iter()
            .map(|w| Vec::with_capacity(self.batch() * w * inner))
            .collect();
        for b in 0..self.batch() {
            let mut offset = b * row;
            for (dst, w) in out.iter_mut().zip(widths) {
                let len = w * inner;
                dst.extend_from_slice(&self.data[offset..offset + len]);
                offset += len;
            }
        }
        out.into_iter()
            .zip(widths)
            .map(|(data, &w)| {
                let mut shape = self.shape.clone();
                shape[1] = w;
                Self::new(shape, data)
            })
            .collect()
    }

    /// Index of the largest entry in each row (first one on ties).
    pub fn argmax_rows(&self) -> Vec<usize> {
        let len = self.sample_len().max(1);
        self.data
            .chunks(len)
            .map(|row| {
                let mut best = 0;
                for (i, v) in row.iter().enumerate() {
                    if *v > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_lengths_and_zero_dims() {
        assert!(matches!(
            Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]),
            Err(TensorError::DataLength { expected: 6, .. })
        ));
        assert!(matches!(
            Tensor::<f32>::new(vec![2, 0], vec![]),
            Err(TensorError::ZeroDim(_))
        ));
    }

    #[test]
    fn concat_then_split_restores_parts() {
        let a = Tensor::<f32>::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::<f32>::new(vec![2, 1], vec![9.0, 8.0]).unwrap();
        let joined = Tensor::concat_axis1(&[&a, &b]).unwrap();
        assert_eq!(joined.shape(), &[2, 3]);
        assert_eq!(joined.data(), &[1.0, 2.0, 9.0, 3.0, 4.0, 8.0]);
        let parts = joined.split_axis1(&[2, 1]).unwrap();
        assert_eq!(parts, vec![a, b]);
    }

    #[test]
    fn concat_rejects_mismatched_batches() {
        let a = Tensor::<f32>::zeros(vec![2, 2]).unwrap();
        let b = Tensor::<f32>::zeros(vec![3, 2]).unwrap();
        assert!(Tensor::concat_axis1(&[&a, &b]).is_err());
    }

    #[test]
    fn row_selection() {
        let t = Tensor::<f64>::new(vec![3, 2], vec![0., 1., 2., 3., 4., 5.]).unwrap();
        assert_eq!(t.rows(1..3).unwrap().data(), &[2., 3., 4., 5.]);
        assert_eq!(t.select_rows(&[2, 0]).unwrap().data(), &[4., 5., 0., 1.]);
        assert!(t.rows(2..4).is_err());
    }

    #[test]
    fn argmax_prefers_first_on_ties() {
        let t = Tensor::<f32>::new(vec![2, 3], vec![1., 1., 0., 0., 2., 3.]).unwrap();
        assert_eq!(t.argmax_rows(), vec![0, 2]);
    }
}
