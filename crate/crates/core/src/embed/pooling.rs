//! Parameter-free embedders over raw frame features.

use serde::{Deserialize, Serialize};

use super::Embedder;
use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Arithmetic mean of all frames.
#[derive(Debug, Clone, Copy, Default)]
pub struct Meanpool;

pub fn meanpool(frames: &Matrix<f32>) -> Result<Vec<f32>> {
    if frames.rows() == 0 {
        return Err(Error::EmptySequence);
    }
    let mut acc = vec![0.0f64; frames.cols()];
    for i in 0..frames.rows() {
        for (a, &v) in acc.iter_mut().zip(frames.row(i)) {
            *a += v as f64;
        }
    }
    let n = frames.rows() as f64;
    Ok(acc.into_iter().map(|a| (a / n) as f32).collect())
}

impl Embedder for Meanpool {
    fn id(&self) -> &str {
        super::MEANPOOL_ID
    }

    fn output_dim(&self, input_dim: usize) -> usize {
        input_dim
    }

    fn embed_frames(&self, frames: &Matrix<f32>) -> Result<Vec<f32>> {
        meanpool(frames)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsampleConfig {
    pub k: usize,
}

impl Default for SubsampleConfig {
    fn default() -> Self {
        SubsampleConfig { k: 10 }
    }
}

/// Frame indices `round(i (T − 1) / (K − 1))`, rounding halves away from zero.
pub fn subsample_indices(n_frames: usize, k: usize) -> Vec<usize> {
    if k == 1 || n_frames == 1 {
        return vec![0; k];
    }
    let span = n_frames - 1;
    let denom = k - 1;
    (0..k)
        .map(|i| (2 * i * span + denom) / (2 * denom))
        .collect()
}

/// Concatenation of `K` equally spaced frames.
pub fn subsample(frames: &Matrix<f32>, cfg: SubsampleConfig) -> Result<Vec<f32>> {
    if cfg.k == 0 {
        return Err(Error::InvalidConfig("subsample K must be >= 1".into()));
    }
    if frames.rows() == 0 {
        return Err(Error::EmptySequence);
    }
    let mut out = Vec::with_capacity(cfg.k * frames.cols());
    for i in subsample_indices(frames.rows(), cfg.k) {
        out.extend_from_slice(frames.row(i));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Subsample {
    pub config: SubsampleConfig,
}

impl Embedder for Subsample {
    fn id(&self) -> &str {
        super::SUBSAMPLE_ID
    }

    fn output_dim(&self, input_dim: usize) -> usize {
        self.config.k * input_dim
    }

    fn embed_frames(&self, frames: &Matrix<f32>) -> Result<Vec<f32>> {
        subsample(frames, self.config)
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn meanpool_examples() {
        let m = Matrix::from_rows(&[vec![1.0, 3.0], vec![3.0, 5.0]]).unwrap();
        assert_eq!(meanpool(&m).unwrap(), vec![2.0, 4.0]);
        let v = vec![0.25f32, -1.5, 7.0];
        let constant = Matrix::from_rows(&vec![v.clone(); 9]).unwrap();
        assert_eq!(meanpool(&constant).unwrap(), v);
        assert!(matches!(meanpool(&Matrix::zeros(0, 3)), Err(Error::EmptySequence)));
    }

    #[test]
    fn meanpool_matches_column_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rows: Vec<Vec<f32>> = (0..7)
            .map(|_| (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let m = Matrix::from_rows(&rows).unwrap();
        let got = meanpool(&m).unwrap();
        for d in 0..5 {
            let expected: f64 = rows.iter().map(|r| r[d] as f64).sum::<f64>() / 7.0;
            assert!((got[d] as f64 - expected).abs() < 1e-6);
        }
    }

    #[test]
    fn subsample_index_examples() {
        assert_eq!(subsample_indices(10, 10), (0..10).collect::<Vec<_>>());
        assert_eq!(subsample_indices(1, 10), vec![0; 10]);
        assert_eq!(subsample_indices(20, 10), vec![0, 2, 4, 6, 8, 11, 13, 15, 17, 19]);
        assert_eq!(subsample_indices(5, 1), vec![0]);
        // T < K repeats frames but stays in range
        assert_eq!(subsample_indices(3, 5), vec![0, 1, 1, 2, 2]);
    }

    #[test]
    fn subsample_with_t_equal_k_flattens() {
        let m = Matrix::from_vec(10, 2, (0..20).map(|x| x as f32).collect()).unwrap();
        let out = subsample(&m, SubsampleConfig::default()).unwrap();
        assert_eq!(out, m.as_slice());
        let single = Matrix::from_rows(&[vec![4.0, 5.0]]).unwrap();
        assert_eq!(
            subsample(&single, SubsampleConfig::default()).unwrap(),
            [4.0, 5.0].repeat(10)
        );
    }
}
