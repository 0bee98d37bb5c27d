use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{nt_xent, reconstruction};
use crate::corpus::WordSegment;
use crate::embed::{backward_batch, encode_batch, Architecture, CaeRnn, Encoder, Model};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, Gradients, Matrix, PaddedBatch, ParameterStore, Real};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub temperature: f64,
    /// Pairs per step. Contrastive batches are capped at the number of word types.
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Rescale the averaged gradient to at most this global norm.
    #[serde(default)]
    pub max_grad_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            temperature: 0.1,
            batch_size: 16,
            steps: 5000,
            seed: 0,
            adam: AdamConfig::default(),
            max_grad_norm: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    /// Contrastive: NT-Xent summed over the batch. CAE: mean reconstruction error.
    pub loss: f64,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub log: Vec<LogRecord>,
    pub batch_size: usize,
}

struct PairData<T> {
    frames: Vec<Matrix<T>>,
    pairs: Vec<(usize, usize)>,
    /// Label index of every pair.
    labels: Vec<usize>,
    n_labels: usize,
}

fn prepare<T: Real>(
    segments: &[WordSegment],
    pairs: &[(usize, usize)],
    input_dim: usize,
) -> Result<PairData<T>> {
    if pairs.is_empty() {
        return Err(Error::NoPositivePairsAvailable);
    }
    for seg in segments {
        if seg.frames.cols() != input_dim {
            return Err(Error::DimMismatch {
                expected: input_dim,
                found: seg.frames.cols(),
            });
        }
    }
    let mut label_ids = BTreeMap::new();
    let mut labels = Vec::with_capacity(pairs.len());
    for &(a, b) in pairs {
        let (sa, sb) = match (segments.get(a), segments.get(b)) {
            (Some(sa), Some(sb)) => (sa, sb),
            _ => {
                return Err(Error::ShapeMismatch(format!(
                    "pair ({a}, {b}) indexes {} segments",
                    segments.len()
                )))
            }
        };
        if sa.label != sb.label {
            return Err(Error::InvalidConfig(format!(
                "pair ({a}, {b}) joins labels {:?} and {:?}",
                sa.label, sb.label
            )));
        }
        let next = label_ids.len();
        labels.push(*label_ids.entry(sa.label.as_str()).or_insert(next));
    }
    Ok(PairData {
        frames: segments.iter().map(|s| s.frames.cast()).collect(),
        pairs: pairs.to_vec(),
        labels,
        n_labels: label_ids.len(),
    })
}

/// Draws pairs with pairwise distinct word types.
fn draw_distinct(rng: &mut ChaCha8Rng, data: &PairData<impl Real>, n: usize) -> Vec<usize> {
    let mut used = vec![false; data.n_labels];
    let mut batch = Vec::with_capacity(n);
    while batch.len() < n {
        let idx = rng.gen_range(0..data.pairs.len() as u64) as usize;
        let label = data.labels[idx];
        if !used[label] {
            used[label] = true;
            batch.push(idx);
        }
    }
    batch
}

fn contrastive_step<A: Encoder, T: Real>(
    arch: &A,
    p: &ParameterStore<T>,
    data: &PairData<T>,
    batch: &[usize],
    temperature: f64,
) -> Result<(f64, Gradients<T>)>
where
    A::Cache<T>: Sync,
{
    let n = batch.len();
    let mut seqs: Vec<&Matrix<T>> = batch.iter().map(|&i| &data.frames[data.pairs[i].0]).collect();
    seqs.extend(batch.iter().map(|&i| &data.frames[data.pairs[i].1]));
    let padded = PaddedBatch::from_sequences(&seqs)?;
    let (embs, caches) = encode_batch(arch, p, &padded)?;
    let out = nt_xent(&embs.slice_rows(0, n), &embs.slice_rows(n, 2 * n), temperature)?;
    let mut d = Matrix::zeros(2 * n, embs.cols());
    d.as_mut_slice()[..n * embs.cols()].copy_from_slice(out.d_anchors.as_slice());
    d.as_mut_slice()[n * embs.cols()..].copy_from_slice(out.d_positives.as_slice());
    // the optimizer sees the batch mean; the log keeps the sum
    d.scale(T::c(1.0 / n as f64));
    let grads = backward_batch(arch, p, &caches, &d)?;
    Ok((out.loss.as_f64(), grads))
}

/// Reconstruction loss and parameter gradients for one `(input, target)` pair.
pub fn cae_pair_gradients<T: Real>(
    arch: &CaeRnn,
    p: &ParameterStore<T>,
    input: &Matrix<T>,
    target: &Matrix<T>,
) -> Result<(T, Gradients<T>)> {
    let (awe, enc_cache) = arch.encode(p, input)?;
    let (decoded, dec_cache) = arch.decode(p, &awe, target.rows())?;
    let (loss, d_decoded) = reconstruction(&decoded, target)?;
    let mut g = Gradients::zeros_like(p);
    let d_awe = arch.decode_backward(p, &dec_cache, &d_decoded, &mut g);
    arch.encode_backward(p, &enc_cache, &d_awe, &mut g);
    Ok((loss, g))
}

fn cae_step<T: Real>(
    arch: &CaeRnn,
    p: &ParameterStore<T>,
    data: &PairData<T>,
    batch: &[usize],
) -> Result<(f64, Gradients<T>)> {
    let per_item: Vec<(T, Gradients<T>)> = batch
        .par_iter()
        .map(|&i| {
            let (a, b) = data.pairs[i];
            cae_pair_gradients(arch, p, &data.frames[a], &data.frames[b])
        })
        .collect::<Result<_>>()?;
    let mut total = Gradients::zeros_like(p);
    let mut loss = 0.0;
    for (l, g) in &per_item {
        loss += l.as_f64();
        total.add(g);
    }
    let inv = 1.0 / batch.len() as f64;
    total.scale(T::c(inv));
    if let Some(name) = total.first_non_finite(p) {
        return Err(Error::NonFiniteGradient(name));
    }
    Ok((loss * inv, total))
}

/// Trains `model` in place on ordered pairs of segment indices (anchor or
/// input first), calling `on_step` after every optimizer step.
pub fn train_with<T: Real>(
    model: &mut Model<T>,
    segments: &[WordSegment],
    pairs: &[(usize, usize)],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&LogRecord),
) -> Result<TrainReport> {
    if cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be positive".into()));
    }
    let data = prepare::<T>(segments, pairs, model.config.input_dim())?;
    let contrastive = model.config.is_contrastive();
    let batch_size = if contrastive {
        cfg.batch_size.min(data.n_labels)
    } else {
        cfg.batch_size
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut adam = Adam::new(cfg.adam, &model.params);
    let start = Instant::now();
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let (loss, mut grads) = if contrastive {
            let batch = draw_distinct(&mut rng, &data, batch_size);
            match &model.arch {
                Architecture::Transformer(a) => {
                    contrastive_step(a, &model.params, &data, &batch, cfg.temperature)?
                }
                Architecture::Rnn(a) => {
                    contrastive_step(a, &model.params, &data, &batch, cfg.temperature)?
                }
                Architecture::Cae(_) => unreachable!("cae is not contrastive"),
            }
        } else {
            let batch: Vec<usize> = (0..batch_size)
                .map(|_| rng.gen_range(0..data.pairs.len() as u64) as usize)
                .collect();
            match &model.arch {
                Architecture::Cae(a) => cae_step(a, &model.params, &data, &batch)?,
                _ => unreachable!("only cae is trained by reconstruction"),
            }
        };
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step, loss });
        }
        if let Some(max) = cfg.max_grad_norm {
            let norm = grads.global_norm().as_f64();
            if norm > max {
                grads.scale(T::c(max / norm));
            }
        }
        adam.step(&mut model.params, &grads)?;
        let rec = LogRecord {
            step,
            loss,
            wall_time: start.elapsed().as_secs_f64(),
        };
        on_step(&rec);
        log.push(rec);
    }
    Ok(TrainReport { log, batch_size })
}

pub fn train<T: Real>(
    model: &mut Model<T>,
    segments: &[WordSegment],
    pairs: &[(usize, usize)],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    train_with(model, segments, pairs, cfg, |_| {})
}
