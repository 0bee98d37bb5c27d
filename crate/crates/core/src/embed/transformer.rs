//! Transformer encoder that reads its embedding off a prepended token.
//!
//! Frames are projected to the model width, a trainable token (initialized to
//! all ones) is placed in front, sinusoidal positions are added (the token sits
//! at position 0), and the pre-norm blocks run over the whole sequence. The
//! token's final-layer state goes through one linear map to give the AWE.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Encoder;
use crate::error::{Error, Result};
use crate::nn::attention::{sinusoidal_positions, BlockCache, TransformerBlock};
use crate::nn::layers::Linear;
use crate::nn::{Gradients, Init, Matrix, ParamId, ParameterStore, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub model_dim: usize,
    pub ffn_dim: usize,
    pub awe_dim: usize,
    pub input_dim: usize,
}

impl TransformerConfig {
    pub fn new(input_dim: usize) -> Self {
        TransformerConfig {
            n_layers: 3,
            n_heads: 16,
            model_dim: 256,
            ffn_dim: 1024,
            awe_dim: 256,
            input_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.n_layers,
            self.n_heads,
            self.model_dim,
            self.ffn_dim,
            self.awe_dim,
            self.input_dim,
        ];
        if positive.contains(&0) {
            return Err(Error::InvalidConfig("transformer dims must be positive".into()));
        }
        if !self.model_dim.is_multiple_of(self.n_heads) {
            return Err(Error::InvalidConfig(format!(
                "model_dim {} is not divisible by {} heads",
                self.model_dim, self.n_heads
            )));
        }
        Ok(())
    }
}

const POSITION_TABLE_ROWS: usize = 1024;

#[derive(Debug, Clone)]
pub struct TransformerEncoder {
    pub config: TransformerConfig,
    input_proj: Linear,
    token: ParamId,
    blocks: Vec<TransformerBlock>,
    output_proj: Linear,
    positions: Matrix<f64>,
}

#[derive(Debug, Clone)]
pub struct TransformerCache<T> {
    x: Matrix<T>,
    blocks: Vec<BlockCache<T>>,
    token_state: Matrix<T>,
}

impl TransformerEncoder {
    pub fn new<T: Real>(
        config: TransformerConfig,
        store: &mut ParameterStore<T>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        config.validate()?;
        let m = config.model_dim;
        let input_proj = Linear::new(store, "input_proj", config.input_dim, m, rng);
        let token = store.add("token", 1, m, Init::Ones, rng);
        let blocks = (0..config.n_layers)
            .map(|l| {
                TransformerBlock::new(store, &format!("block{l}"), m, config.n_heads, config.ffn_dim, rng)
            })
            .collect();
        let output_proj = Linear::new(store, "output_proj", m, config.awe_dim, rng);
        Ok(TransformerEncoder {
            config,
            input_proj,
            token,
            blocks,
            output_proj,
            positions: sinusoidal_positions(POSITION_TABLE_ROWS, m),
        })
    }

    fn check_input<T: Real>(&self, x: &Matrix<T>, valid: usize) -> Result<()> {
        if valid == 0 || x.rows() == 0 {
            return Err(Error::EmptySequence);
        }
        if x.cols() != self.config.input_dim {
            return Err(Error::DimMismatch {
                expected: self.config.input_dim,
                found: x.cols(),
            });
        }
        if valid > x.rows() {
            return Err(Error::ShapeMismatch(format!(
                "{valid} valid frames in a {}-row block",
                x.rows()
            )));
        }
        Ok(())
    }

    fn add_positions<T: Real>(&self, h: &mut Matrix<T>) {
        let m = self.config.model_dim;
        let n = h.rows() * m;
        if h.rows() <= POSITION_TABLE_ROWS {
            for (a, &b) in h
                .as_mut_slice()
                .iter_mut()
                .zip(&self.positions.as_slice()[..n])
            {
                *a += T::c(b);
            }
        } else {
            h.add_assign(&sinusoidal_positions(h.rows(), m));
        }
    }

    /// Runs on a block whose first `valid` rows are real frames; later rows are
    /// padding and are masked out of attention.
    pub fn encode_padded<T: Real>(
        &self,
        p: &ParameterStore<T>,
        x: &Matrix<T>,
        valid: usize,
    ) -> Result<(Vec<T>, TransformerCache<T>)> {
        self.check_input(x, valid)?;
        let m = self.config.model_dim;
        let proj = self.input_proj.forward(p, x);
        let mut h = Matrix::zeros(x.rows() + 1, m);
        h.row_mut(0).copy_from_slice(p.get(self.token).as_slice());
        h.as_mut_slice()[m..].copy_from_slice(proj.as_slice());
        self.add_positions(&mut h);
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (out, cache) = block.forward(p, &h, valid + 1);
            caches.push(cache);
            h = out;
        }
        let token_state = h.slice_rows(0, 1);
        let awe = self.output_proj.forward(p, &token_state).into_vec();
        Ok((
            awe,
            TransformerCache {
                x: x.clone(),
                blocks: caches,
                token_state,
            },
        ))
    }
}

impl Encoder for TransformerEncoder {
    type Cache<T: Real> = TransformerCache<T>;

    fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    fn awe_dim(&self) -> usize {
        self.config.awe_dim
    }

    fn encode<T: Real>(
        &self,
        p: &ParameterStore<T>,
        x: &Matrix<T>,
    ) -> Result<(Vec<T>, TransformerCache<T>)> {
        self.encode_padded(p, x, x.rows())
    }

    fn encode_backward<T: Real>(
        &self,
        p: &ParameterStore<T>,
        cache: &TransformerCache<T>,
        d_awe: &[T],
        g: &mut Gradients<T>,
    ) -> Matrix<T> {
        let m = self.config.model_dim;
        let d_out = Matrix::from_vec(1, d_awe.len(), d_awe.to_vec()).expect("shape");
        let d_token = self.output_proj.backward(p, &cache.token_state, &d_out, g);
        let mut dh = Matrix::zeros(cache.x.rows() + 1, m);
        dh.row_mut(0).copy_from_slice(d_token.as_slice());
        for (block, bc) in self.blocks.iter().zip(&cache.blocks).rev() {
            dh = block.backward(p, bc, &dh, g);
        }
        g.accumulate_row(self.token, dh.row(0));
        let dproj = dh.slice_rows(1, dh.rows());
        self.input_proj.backward(p, &cache.x, &dproj, g)
    }
}
