//! Synthetic word corpora for end-to-end checks.
//!
//! Each word type is a smoothed random prototype with zero mean per
//! dimension. Instances are time-warped by linear resampling, shifted by a
//! per-speaker offset and perturbed with white noise. Search utterances are
//! concatenations of instances with word alignments recorded.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, FeatureSequence, WordAlignment};
use crate::error::{Error, Result};
use crate::nn::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_types: usize,
    pub dim: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub n_speakers: usize,
    pub train_per_type: usize,
    pub heldout_per_type: usize,
    pub templates_per_type: usize,
    pub n_search: usize,
    pub min_words: usize,
    pub max_words: usize,
    /// Half-width of the moving average applied to prototypes.
    pub smoothing: usize,
    pub noise: f64,
    pub speaker_offset: f64,
    pub warp_min: f64,
    pub warp_max: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_types: 20,
            dim: 16,
            min_len: 20,
            max_len: 60,
            n_speakers: 8,
            train_per_type: 10,
            heldout_per_type: 5,
            templates_per_type: 3,
            n_search: 200,
            min_words: 3,
            max_words: 6,
            smoothing: 3,
            noise: 0.3,
            speaker_offset: 0.3,
            warp_min: 0.8,
            warp_max: 1.2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let ok = self.n_types > 0
            && self.dim > 0
            && self.min_len >= 2
            && self.min_len <= self.max_len
            && self.n_speakers > 0
            && self.min_words >= 1
            && self.min_words <= self.max_words
            && self.warp_min > 0.0
            && self.warp_min <= self.warp_max
            && self.noise >= 0.0
            && self.speaker_offset >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("bad synthetic corpus config {self:?}")))
        }
    }
}

/// Isolated-word corpora carry one alignment spanning the whole utterance.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub train: Corpus,
    pub heldout: Corpus,
    pub templates: Corpus,
    pub search: Corpus,
    pub labels: Vec<String>,
}

pub fn label(i: usize) -> String {
    format!("w{i:02}")
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn prototype(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Vec<Vec<f64>> {
    let len = rng.gen_range(cfg.min_len..=cfg.max_len);
    let raw: Vec<Vec<f64>> = (0..len)
        .map(|_| (0..cfg.dim).map(|_| normal(rng)).collect())
        .collect();
    let mut out = vec![vec![0.0; cfg.dim]; len];
    for (t, row) in out.iter_mut().enumerate() {
        let lo = t.saturating_sub(cfg.smoothing);
        let hi = (t + cfg.smoothing + 1).min(len);
        for src in &raw[lo..hi] {
            for (o, v) in row.iter_mut().zip(src) {
                *o += v;
            }
        }
        row.iter_mut().for_each(|o| *o /= (hi - lo) as f64);
    }
    // zero mean, unit variance per dimension
    for d in 0..cfg.dim {
        let mean = out.iter().map(|r| r[d]).sum::<f64>() / len as f64;
        let var = out.iter().map(|r| (r[d] - mean).powi(2)).sum::<f64>() / len as f64;
        let sd = var.sqrt().max(1e-8);
        out.iter_mut().for_each(|r| r[d] = (r[d] - mean) / sd);
    }
    out
}

/// Resamples `proto` to `round(len · warp)` frames by linear interpolation.
fn warp(proto: &[Vec<f64>], factor: f64) -> Vec<Vec<f64>> {
    let n = proto.len();
    let m = ((n as f64 * factor).round() as usize).max(2);
    (0..m)
        .map(|i| {
            let pos = i as f64 * (n - 1) as f64 / (m - 1) as f64;
            let lo = (pos.floor() as usize).min(n - 1);
            let hi = (lo + 1).min(n - 1);
            let frac = pos - lo as f64;
            proto[lo]
                .iter()
                .zip(&proto[hi])
                .map(|(a, b)| a + (b - a) * frac)
                .collect()
        })
        .collect()
}

struct Generator<'a> {
    cfg: &'a SynthConfig,
    protos: Vec<Vec<Vec<f64>>>,
    offsets: Vec<Vec<f64>>,
}

impl Generator<'_> {
    fn instance(&self, rng: &mut ChaCha8Rng, word: usize, speaker: usize) -> Vec<Vec<f32>> {
        let factor = rng.gen_range(self.cfg.warp_min..=self.cfg.warp_max);
        warp(&self.protos[word], factor)
            .into_iter()
            .map(|row| {
                row.iter()
                    .zip(&self.offsets[speaker])
                    .map(|(v, o)| (v + o + self.cfg.noise * normal(rng)) as f32)
                    .collect()
            })
            .collect()
    }

    fn isolated(&self, rng: &mut ChaCha8Rng, prefix: &str, per_type: usize) -> Result<Corpus> {
        let mut seqs = Vec::new();
        for w in 0..self.cfg.n_types {
            for k in 0..per_type {
                let speaker = rng.gen_range(0..self.cfg.n_speakers);
                let rows = self.instance(rng, w, speaker);
                let n = rows.len();
                seqs.push(
                    FeatureSequence::new(
                        format!("{prefix}-{}-{k:02}", label(w)),
                        format!("spk{speaker}"),
                        Matrix::from_rows(&rows)?,
                    )
                    .with_words(vec![WordAlignment {
                        label: label(w),
                        start: 0,
                        end: n,
                    }]),
                );
            }
        }
        Corpus::new(seqs)
    }

    fn search(&self, rng: &mut ChaCha8Rng) -> Result<Corpus> {
        let mut seqs = Vec::with_capacity(self.cfg.n_search);
        for u in 0..self.cfg.n_search {
            let speaker = rng.gen_range(0..self.cfg.n_speakers);
            let n_words = rng.gen_range(self.cfg.min_words..=self.cfg.max_words);
            let mut rows = Vec::new();
            let mut words = Vec::with_capacity(n_words);
            for _ in 0..n_words {
                let w = rng.gen_range(0..self.cfg.n_types);
                let inst = self.instance(rng, w, speaker);
                words.push(WordAlignment {
                    label: label(w),
                    start: rows.len(),
                    end: rows.len() + inst.len(),
                });
                rows.extend(inst);
            }
            seqs.push(
                FeatureSequence::new(format!("search-{u:03}"), format!("spk{speaker}"), Matrix::from_rows(&rows)?)
                    .with_words(words),
            );
        }
        Corpus::new(seqs)
    }
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let stream = |s: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
        r.set_stream(s);
        r
    };
    let mut rng = stream(0);
    let protos = (0..cfg.n_types).map(|_| prototype(&mut rng, cfg)).collect();
    let offsets = (0..cfg.n_speakers)
        .map(|_| (0..cfg.dim).map(|_| cfg.speaker_offset * normal(&mut rng)).collect())
        .collect();
    let g = Generator { cfg, protos, offsets };
    Ok(SynthData {
        train: g.isolated(&mut stream(1), "train", cfg.train_per_type)?,
        heldout: g.isolated(&mut stream(2), "heldout", cfg.heldout_per_type)?,
        templates: g.isolated(&mut stream(3), "template", cfg.templates_per_type)?,
        search: g.search(&mut stream(4))?,
        labels: (0..cfg.n_types).map(label).collect(),
    })
}
