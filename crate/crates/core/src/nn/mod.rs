//! A small differentiable core: parameter storage, layers with explicit
//! reverse passes, an optimizer and finite-difference checking.
//!
//! There is no general tape. Each model composes layers statically and calls
//! their `backward` methods in reverse order.

pub mod attention;
pub mod gradcheck;
pub mod gru;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tensor;

pub use optim::{Adam, AdamConfig};
pub use params::{Gradients, Init, ParamId, ParameterStore};
pub use tensor::{Matrix, Real};

use crate::error::{Error, Result};

/// Variable-length sequences packed into a `B × T_max × D` buffer.
///
/// Frames at positions `>= lengths[i]` are padding and never reach a model.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedBatch<T> {
    data: Vec<T>,
    lengths: Vec<usize>,
    max_len: usize,
    dim: usize,
}

impl<T: Real> PaddedBatch<T> {
    pub fn from_sequences(seqs: &[&Matrix<T>]) -> Result<Self> {
        let dim = seqs.first().map_or(0, |s| s.cols());
        let max_len = seqs.iter().map(|s| s.rows()).max().unwrap_or(0);
        let mut data = vec![T::zero(); seqs.len() * max_len * dim];
        let mut lengths = Vec::with_capacity(seqs.len());
        for (b, s) in seqs.iter().enumerate() {
            if s.cols() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    found: s.cols(),
                });
            }
            if s.rows() == 0 {
                return Err(Error::EmptySequence);
            }
            let off = b * max_len * dim;
            data[off..off + s.rows() * dim].copy_from_slice(s.as_slice());
            lengths.push(s.rows());
        }
        Ok(PaddedBatch {
            data,
            lengths,
            max_len,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Full `T_max × D` block of item `b`, padding included.
    pub fn padded_item(&self, b: usize) -> Matrix<T> {
        let off = b * self.max_len * self.dim;
        Matrix::from_vec(
            self.max_len,
            self.dim,
            self.data[off..off + self.max_len * self.dim].to_vec(),
        )
        .expect("shape")
    }

    /// The unpadded frames of item `b`.
    pub fn item(&self, b: usize) -> Matrix<T> {
        let off = b * self.max_len * self.dim;
        Matrix::from_vec(
            self.lengths[b],
            self.dim,
            self.data[off..off + self.lengths[b] * self.dim].to_vec(),
        )
        .expect("shape")
    }

    /// Mutable access to a padded frame, for masking tests.
    pub fn frame_mut(&mut self, b: usize, t: usize) -> &mut [T] {
        let off = (b * self.max_len + t) * self.dim;
        &mut self.data[off..off + self.dim]
    }
}
