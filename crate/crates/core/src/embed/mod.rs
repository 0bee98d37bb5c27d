//! Acoustic word embedders.
//!
//! Two parameter-free embedders work directly on features ([`Meanpool`],
//! [`Subsample`]); three trainable ones share the [`Encoder`] interface and are
//! wrapped in a [`Model`] that owns their parameters.

pub mod pooling;
pub mod rnn;
pub mod transformer;

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use pooling::{meanpool, subsample, subsample_indices, Meanpool, Subsample, SubsampleConfig};
pub use rnn::{CaeRnn, RnnConfig, RnnEncoder};
pub use transformer::{TransformerConfig, TransformerEncoder};

use crate::corpus::FeatureSequence;
use crate::error::{Error, Result};
use crate::nn::params::peek_checkpoint;
use crate::nn::{Gradients, Matrix, PaddedBatch, ParameterStore, Real};

pub const MEANPOOL_ID: &str = "meanpool";
pub const SUBSAMPLE_ID: &str = "subsample";
pub const CAE_RNN_ID: &str = "cae-rnn";
pub const CONTRASTIVE_RNN_ID: &str = "contrastive-rnn";
pub const CONTRASTIVE_TRANSFORMER_ID: &str = "contrastive-transformer";

#[derive(Debug, Clone, PartialEq)]
pub struct Awe {
    pub vector: Vec<f32>,
    pub embedder_id: String,
}

/// Maps a variable-length frame matrix to a fixed-size vector.
pub trait Embedder: Send + Sync {
    fn id(&self) -> &str;

    fn output_dim(&self, input_dim: usize) -> usize;

    fn embed_frames(&self, frames: &Matrix<f32>) -> Result<Vec<f32>>;

    fn embed(&self, seq: &FeatureSequence) -> Result<Awe> {
        let vector = self.embed_frames(&seq.frames)?;
        if !vector.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteValue(format!(
                "{} embedding of {:?}",
                self.id(),
                seq.utterance_id
            )));
        }
        Ok(Awe {
            vector,
            embedder_id: self.id().to_string(),
        })
    }
}

/// A differentiable sequence encoder with an explicit reverse pass.
pub trait Encoder: Send + Sync {
    type Cache<T: Real>: Send;

    fn input_dim(&self) -> usize;

    fn awe_dim(&self) -> usize;

    fn encode<T: Real>(&self, p: &ParameterStore<T>, x: &Matrix<T>)
        -> Result<(Vec<T>, Self::Cache<T>)>;

    /// Accumulates parameter gradients and returns the input gradient.
    fn encode_backward<T: Real>(
        &self,
        p: &ParameterStore<T>,
        cache: &Self::Cache<T>,
        d_awe: &[T],
        g: &mut Gradients<T>,
    ) -> Matrix<T>;
}

/// Encodes every item of a padded batch; row `b` of the result is item `b`'s AWE.
pub fn encode_batch<A: Encoder, T: Real>(
    arch: &A,
    p: &ParameterStore<T>,
    batch: &PaddedBatch<T>,
) -> Result<(Matrix<T>, Vec<A::Cache<T>>)> {
    let results: Vec<(Vec<T>, A::Cache<T>)> = (0..batch.len())
        .into_par_iter()
        .map(|b| arch.encode(p, &batch.item(b)))
        .collect::<Result<_>>()?;
    let mut out = Matrix::zeros(batch.len(), arch.awe_dim());
    let mut caches = Vec::with_capacity(results.len());
    for (b, (awe, cache)) in results.into_iter().enumerate() {
        out.row_mut(b).copy_from_slice(&awe);
        caches.push(cache);
    }
    Ok((out, caches))
}

/// Parameter gradients of a batch given `d_awes` (one row per item). Per-item
/// gradients are summed in item order, so the result does not depend on the
/// thread count.
pub fn backward_batch<A: Encoder, T: Real>(
    arch: &A,
    p: &ParameterStore<T>,
    caches: &[A::Cache<T>],
    d_awes: &Matrix<T>,
) -> Result<Gradients<T>>
where
    A::Cache<T>: Sync,
{
    if d_awes.rows() != caches.len() || d_awes.cols() != arch.awe_dim() {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} AWE gradient for {} items of dim {}",
            d_awes.rows(),
            d_awes.cols(),
            caches.len(),
            arch.awe_dim()
        )));
    }
    let per_item: Vec<Gradients<T>> = caches
        .par_iter()
        .enumerate()
        .map(|(b, cache)| {
            let mut g = Gradients::zeros_like(p);
            arch.encode_backward(p, cache, d_awes.row(b), &mut g);
            g
        })
        .collect();
    let mut total = Gradients::zeros_like(p);
    for g in &per_item {
        total.add(g);
    }
    if let Some(name) = total.first_non_finite(p) {
        return Err(Error::NonFiniteGradient(name));
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "embedder_id", content = "config")]
pub enum ModelConfig {
    #[serde(rename = "contrastive-transformer")]
    ContrastiveTransformer(TransformerConfig),
    #[serde(rename = "contrastive-rnn")]
    ContrastiveRnn(RnnConfig),
    #[serde(rename = "cae-rnn")]
    CaeRnn(RnnConfig),
}

impl ModelConfig {
    pub fn embedder_id(&self) -> &'static str {
        match self {
            ModelConfig::ContrastiveTransformer(_) => CONTRASTIVE_TRANSFORMER_ID,
            ModelConfig::ContrastiveRnn(_) => CONTRASTIVE_RNN_ID,
            ModelConfig::CaeRnn(_) => CAE_RNN_ID,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            ModelConfig::ContrastiveTransformer(c) => c.input_dim,
            ModelConfig::ContrastiveRnn(c) | ModelConfig::CaeRnn(c) => c.input_dim,
        }
    }

    pub fn is_contrastive(&self) -> bool {
        !matches!(self, ModelConfig::CaeRnn(_))
    }
}

#[derive(Debug, Clone)]
pub enum Architecture {
    Transformer(TransformerEncoder),
    Rnn(RnnEncoder),
    Cae(CaeRnn),
}

/// A trainable embedder together with its parameters.
#[derive(Debug, Clone)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub arch: Architecture,
    pub params: ParameterStore<T>,
}

impl<T: Real> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParameterStore::new();
        let arch = match config {
            ModelConfig::ContrastiveTransformer(c) => {
                Architecture::Transformer(TransformerEncoder::new(c, &mut params, &mut rng)?)
            }
            ModelConfig::ContrastiveRnn(c) => {
                Architecture::Rnn(RnnEncoder::new(c, &mut params, &mut rng)?)
            }
            ModelConfig::CaeRnn(c) => Architecture::Cae(CaeRnn::new(c, &mut params, &mut rng)?),
        };
        Ok(Model {
            config,
            arch,
            params,
        })
    }

    pub fn awe_dim(&self) -> usize {
        match &self.arch {
            Architecture::Transformer(a) => a.awe_dim(),
            Architecture::Rnn(a) => a.awe_dim(),
            Architecture::Cae(a) => a.awe_dim(),
        }
    }

    pub fn encode(&self, x: &Matrix<T>) -> Result<Vec<T>> {
        let p = &self.params;
        Ok(match &self.arch {
            Architecture::Transformer(a) => a.encode(p, x)?.0,
            Architecture::Rnn(a) => a.encode(p, x)?.0,
            Architecture::Cae(a) => a.encode(p, x)?.0,
        })
    }

    fn meta(&self) -> serde_json::Value {
        serde_json::to_value(self.config).expect("config serializes")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.params.to_bytes(&self.meta())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.params.save(path, &self.meta())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (store, meta) = ParameterStore::<T>::from_bytes(bytes)?;
        let config: ModelConfig = serde_json::from_value(meta)
            .map_err(|e| Error::Checkpoint(format!("bad model metadata: {e}")))?;
        let mut model = Model::new(config, 0)?;
        model.params.assign_from(&store)?;
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

impl<T: Real> Embedder for Model<T> {
    fn id(&self) -> &str {
        self.config.embedder_id()
    }

    fn output_dim(&self, _input_dim: usize) -> usize {
        self.awe_dim()
    }

    fn embed_frames(&self, frames: &Matrix<f32>) -> Result<Vec<f32>> {
        let x: Matrix<T> = frames.cast();
        Ok(self.encode(&x)?.into_iter().map(|v| v.as_f64() as f32).collect())
    }
}

/// Loads any trained-model checkpoint, in whichever precision it was saved.
pub fn load_embedder(path: &Path) -> Result<Box<dyn Embedder>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (dtype, _) = peek_checkpoint(&bytes)?;
    match dtype.as_str() {
        "f32" => Ok(Box::new(Model::<f32>::from_bytes(&bytes)?)),
        "f64" => Ok(Box::new(Model::<f64>::from_bytes(&bytes)?)),
        other => Err(Error::Checkpoint(format!("unknown dtype {other}"))),
    }
}
