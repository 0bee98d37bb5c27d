//! Recurrent encoders: the contrastive RNN and the correspondence autoencoder.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Encoder;
use crate::error::{Error, Result};
use crate::nn::gru::{GruLayerCache, GruStack};
use crate::nn::layers::Linear;
use crate::nn::{Gradients, Matrix, ParameterStore, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RnnConfig {
    pub n_layers: usize,
    pub hidden_dim: usize,
    pub awe_dim: usize,
    pub input_dim: usize,
}

impl RnnConfig {
    pub fn new(input_dim: usize) -> Self {
        RnnConfig {
            n_layers: 3,
            hidden_dim: 400,
            awe_dim: 256,
            input_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.n_layers, self.hidden_dim, self.awe_dim, self.input_dim].contains(&0) {
            return Err(Error::InvalidConfig("rnn dims must be positive".into()));
        }
        Ok(())
    }
}

/// GRU stack whose final top-layer state is projected to the AWE.
#[derive(Debug, Clone)]
pub struct RnnEncoder {
    pub config: RnnConfig,
    gru: GruStack,
    proj: Linear,
}

#[derive(Debug, Clone)]
pub struct RnnCache<T> {
    layers: Vec<GruLayerCache<T>>,
    last: Matrix<T>,
    steps: usize,
}

impl RnnEncoder {
    pub fn new<T: Real>(
        config: RnnConfig,
        store: &mut ParameterStore<T>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Self::with_prefix(config, store, rng, "encoder")
    }

    fn with_prefix<T: Real>(
        config: RnnConfig,
        store: &mut ParameterStore<T>,
        rng: &mut ChaCha8Rng,
        prefix: &str,
    ) -> Result<Self> {
        config.validate()?;
        let gru = GruStack::new(
            store,
            &format!("{prefix}.gru"),
            config.input_dim,
            config.hidden_dim,
            config.n_layers,
            rng,
        );
        let proj = Linear::new(
            store,
            &format!("{prefix}.proj"),
            config.hidden_dim,
            config.awe_dim,
            rng,
        );
        Ok(RnnEncoder { config, gru, proj })
    }
}

impl Encoder for RnnEncoder {
    type Cache<T: Real> = RnnCache<T>;

    fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    fn awe_dim(&self) -> usize {
        self.config.awe_dim
    }

    fn encode<T: Real>(&self, p: &ParameterStore<T>, x: &Matrix<T>) -> Result<(Vec<T>, RnnCache<T>)> {
        if x.rows() == 0 {
            return Err(Error::EmptySequence);
        }
        if x.cols() != self.config.input_dim {
            return Err(Error::DimMismatch {
                expected: self.config.input_dim,
                found: x.cols(),
            });
        }
        let (states, layers) = self.gru.forward(p, x);
        let last = states.slice_rows(states.rows() - 1, states.rows());
        let awe = self.proj.forward(p, &last).into_vec();
        Ok((
            awe,
            RnnCache {
                layers,
                last,
                steps: x.rows(),
            },
        ))
    }

    fn encode_backward<T: Real>(
        &self,
        p: &ParameterStore<T>,
        cache: &RnnCache<T>,
        d_awe: &[T],
        g: &mut Gradients<T>,
    ) -> Matrix<T> {
        let d_out = Matrix::from_vec(1, d_awe.len(), d_awe.to_vec()).expect("shape");
        let d_last = self.proj.backward(p, &cache.last, &d_out, g);
        let mut d_states = Matrix::zeros(cache.steps, self.config.hidden_dim);
        d_states
            .row_mut(cache.steps - 1)
            .copy_from_slice(d_last.as_slice());
        self.gru.backward(p, &cache.layers, &d_states, g)
    }
}

/// Encoder plus a decoder that reconstructs a different instance of the word.
///
/// The decoder mirrors the encoder's depth and width, starts from a zero state
/// and receives the AWE as its input at every step; a linear readout maps each
/// decoder state back to the feature dim.
#[derive(Debug, Clone)]
pub struct CaeRnn {
    pub encoder: RnnEncoder,
    decoder: GruStack,
    readout: Linear,
}

#[derive(Debug, Clone)]
pub struct DecoderCache<T> {
    layers: Vec<GruLayerCache<T>>,
    states: Matrix<T>,
}

impl CaeRnn {
    pub fn new<T: Real>(
        config: RnnConfig,
        store: &mut ParameterStore<T>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let encoder = RnnEncoder::with_prefix(config, store, rng, "encoder")?;
        let decoder = GruStack::new(
            store,
            "decoder.gru",
            config.awe_dim,
            config.hidden_dim,
            config.n_layers,
            rng,
        );
        let readout = Linear::new(store, "decoder.readout", config.hidden_dim, config.input_dim, rng);
        Ok(CaeRnn {
            encoder,
            decoder,
            readout,
        })
    }

    pub fn config(&self) -> &RnnConfig {
        &self.encoder.config
    }

    pub fn decode<T: Real>(
        &self,
        p: &ParameterStore<T>,
        awe: &[T],
        target_len: usize,
    ) -> Result<(Matrix<T>, DecoderCache<T>)> {
        if target_len == 0 {
            return Err(Error::InvalidLength(0));
        }
        if awe.len() != self.config().awe_dim {
            return Err(Error::DimMismatch {
                expected: self.config().awe_dim,
                found: awe.len(),
            });
        }
        let mut input = Matrix::zeros(target_len, awe.len());
        for t in 0..target_len {
            input.row_mut(t).copy_from_slice(awe);
        }
        let (states, layers) = self.decoder.forward(p, &input);
        let out = self.readout.forward(p, &states);
        Ok((out, DecoderCache { layers, states }))
    }

    /// Returns the gradient w.r.t. the AWE fed to [`CaeRnn::decode`].
    pub fn decode_backward<T: Real>(
        &self,
        p: &ParameterStore<T>,
        cache: &DecoderCache<T>,
        d_out: &Matrix<T>,
        g: &mut Gradients<T>,
    ) -> Vec<T> {
        let d_states = self.readout.backward(p, &cache.states, d_out, g);
        let d_input = self.decoder.backward(p, &cache.layers, &d_states, g);
        d_input.column_sums()
    }
}

impl Encoder for CaeRnn {
    type Cache<T: Real> = RnnCache<T>;

    fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    fn awe_dim(&self) -> usize {
        self.encoder.awe_dim()
    }

    fn encode<T: Real>(&self, p: &ParameterStore<T>, x: &Matrix<T>) -> Result<(Vec<T>, RnnCache<T>)> {
        self.encoder.encode(p, x)
    }

    fn encode_backward<T: Real>(
        &self,
        p: &ParameterStore<T>,
        cache: &RnnCache<T>,
        d_awe: &[T],
        g: &mut Gradients<T>,
    ) -> Matrix<T> {
        self.encoder.encode_backward(p, cache, d_awe, g)
    }
}
