//! Feature corpora: the on-disk interchange format, normalization, word
//! segments and positive-pair sampling.
//!
//! A corpus on disk is a manifest with one JSON object per line,
//!
//! ```text
//! {"id": "utt1", "speaker": "spk3", "n_frames": 120, "dim": 768, "path": "utt1.f32",
//!  "words": [{"label": "water", "start": 10, "end": 42}]}
//! ```
//!
//! plus one headerless file per utterance holding `n_frames * dim` row-major
//! little-endian `f32` values. Paths are relative to the manifest's directory.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;

pub const DEFAULT_SAMPLE_PERIOD: f64 = 0.02;

/// Frame containing time `seconds`: `floor(seconds / sample_period)`. Feature
/// extractors convert word boundaries with this, so an alignment
/// `[t0, t1)` in seconds becomes `[frame_index(t0), frame_index(t1))`.
pub fn frame_index(seconds: f64, sample_period: f64) -> usize {
    // Guard against 0.3 / 0.02 = 14.999999999999998 style round-off.
    let x = seconds / sample_period;
    let r = x.round();
    if (x - r).abs() < 1e-9 * r.max(1.0) {
        r as usize
    } else {
        x.floor() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordAlignment {
    pub label: String,
    pub start: usize,
    /// Exclusive.
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub speaker: String,
    pub n_frames: usize,
    pub dim: usize,
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub words: Option<Vec<WordAlignment>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_period: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub utterance_id: String,
    pub speaker_id: String,
    pub frames: Matrix<f32>,
    pub sample_period: f64,
    pub words: Vec<WordAlignment>,
}

impl FeatureSequence {
    pub fn new(
        utterance_id: impl Into<String>,
        speaker_id: impl Into<String>,
        frames: Matrix<f32>,
    ) -> Self {
        FeatureSequence {
            utterance_id: utterance_id.into(),
            speaker_id: speaker_id.into(),
            frames,
            sample_period: DEFAULT_SAMPLE_PERIOD,
            words: Vec::new(),
        }
    }

    pub fn with_words(mut self, words: Vec<WordAlignment>) -> Self {
        self.words = words;
        self
    }

    pub fn n_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }
}

/// An immutable, validated collection of feature sequences sharing one dim.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    sequences: Vec<FeatureSequence>,
}

impl Corpus {
    pub fn new(sequences: Vec<FeatureSequence>) -> Result<Self> {
        let mut ids = HashSet::new();
        let dim = sequences.first().map(FeatureSequence::dim);
        for s in &sequences {
            if !ids.insert(s.utterance_id.as_str()) {
                return Err(Error::DuplicateUtterance(s.utterance_id.clone()));
            }
            if s.n_frames() == 0 {
                return Err(Error::EmptySequence);
            }
            if s.dim() == 0 {
                return Err(Error::InvalidLength(0));
            }
            if let Some(d) = dim {
                if s.dim() != d {
                    return Err(Error::InconsistentFeatureDim {
                        utterance: s.utterance_id.clone(),
                        expected: d,
                        found: s.dim(),
                    });
                }
            }
            if !s.frames.as_slice().iter().all(|v| v.is_finite()) {
                return Err(Error::NonFiniteValue(format!("utterance {:?}", s.utterance_id)));
            }
            for w in &s.words {
                check_alignment(s, w)?;
            }
        }
        Ok(Corpus { sequences })
    }

    pub fn sequences(&self) -> &[FeatureSequence] {
        &self.sequences
    }

    pub fn into_sequences(self) -> Vec<FeatureSequence> {
        self.sequences
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// Feature dim, or `None` for an empty corpus.
    pub fn dim(&self) -> Option<usize> {
        self.sequences.first().map(FeatureSequence::dim)
    }

    pub fn get(&self, id: &str) -> Option<&FeatureSequence> {
        self.sequences.iter().find(|s| s.utterance_id == id)
    }
}

fn check_alignment(seq: &FeatureSequence, w: &WordAlignment) -> Result<()> {
    if w.start >= w.end || w.end > seq.n_frames() {
        return Err(Error::AlignmentOutOfRange {
            utterance: seq.utterance_id.clone(),
            label: w.label.clone(),
            start: w.start,
            end: w.end,
            n_frames: seq.n_frames(),
        });
    }
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(&line).map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if let Some(words) = &rec.words {
            if words.iter().any(|w| w.label.is_empty()) {
                return Err(Error::Manifest {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: "word label is empty".into(),
                });
            }
        }
        records.push(rec);
    }
    Ok(records)
}

fn read_features(path: &Path, n_frames: usize, dim: usize) -> Result<Matrix<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = 4 * n_frames as u64 * dim as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::DimensionMismatch {
            path: path.to_path_buf(),
            n_frames,
            dim,
            expected,
            found: bytes.len() as u64,
        });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Matrix::from_vec(n_frames, dim, data)
}

/// Loads a corpus in manifest order, validating every invariant.
pub fn load_corpus(manifest_path: &Path) -> Result<Corpus> {
    let records = read_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut seqs = Vec::with_capacity(records.len());
    let mut dim: Option<usize> = None;
    for rec in records {
        if rec.n_frames == 0 {
            return Err(Error::EmptySequence);
        }
        match dim {
            Some(d) if d != rec.dim => {
                return Err(Error::InconsistentFeatureDim {
                    utterance: rec.id,
                    expected: d,
                    found: rec.dim,
                })
            }
            _ => dim = Some(rec.dim),
        }
        let frames = read_features(&base.join(&rec.path), rec.n_frames, rec.dim)?;
        seqs.push(FeatureSequence {
            utterance_id: rec.id,
            speaker_id: rec.speaker,
            frames,
            sample_period: rec.sample_period.unwrap_or(DEFAULT_SAMPLE_PERIOD),
            words: rec.words.unwrap_or_default(),
        });
    }
    Corpus::new(seqs)
}

fn file_stem_for(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

/// Writes `corpus` as a manifest plus one feature file per utterance, placed
/// next to the manifest. Returns the manifest path.
pub fn write_corpus(corpus: &Corpus, manifest_path: &Path) -> Result<PathBuf> {
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(base).map_err(|e| Error::io(base, e))?;
    let stem = manifest_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut manifest = Vec::new();
    let mut used = HashSet::new();
    for (i, s) in corpus.sequences().iter().enumerate() {
        let mut name = format!("{stem}.{}.f32", file_stem_for(&s.utterance_id));
        if !used.insert(name.clone()) {
            name = format!("{stem}.{}.{i}.f32", file_stem_for(&s.utterance_id));
            used.insert(name.clone());
        }
        let mut bytes = Vec::with_capacity(s.frames.as_slice().len() * 4);
        for v in s.frames.as_slice() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let fpath = base.join(&name);
        fs::write(&fpath, bytes).map_err(|e| Error::io(&fpath, e))?;
        let rec = ManifestRecord {
            id: s.utterance_id.clone(),
            speaker: s.speaker_id.clone(),
            n_frames: s.n_frames(),
            dim: s.dim(),
            path: name,
            words: if s.words.is_empty() {
                None
            } else {
                Some(s.words.clone())
            },
            sample_period: (s.sample_period != DEFAULT_SAMPLE_PERIOD).then_some(s.sample_period),
        };
        serde_json::to_writer(&mut manifest, &rec).expect("record serializes");
        manifest.push(b'\n');
    }
    let mut f = fs::File::create(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    f.write_all(&manifest).map_err(|e| Error::io(manifest_path, e))?;
    Ok(manifest_path.to_path_buf())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizationMode {
    PerUtterance,
    PerSpeaker,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationScope {
    pub mode: NormalizationMode,
    pub epsilon: f64,
}

impl NormalizationScope {
    pub const DEFAULT_EPSILON: f64 = 1e-8;

    pub fn new(mode: NormalizationMode) -> Self {
        NormalizationScope {
            mode,
            epsilon: Self::DEFAULT_EPSILON,
        }
    }
}

/// Per-dimension mean and inverse standard deviation (population variance,
/// floored at `epsilon`).
fn moments<'a>(
    frames: impl Iterator<Item = &'a Matrix<f32>> + Clone,
    dim: usize,
    epsilon: f64,
) -> Option<(Vec<f64>, Vec<f64>)> {
    let mut count = 0usize;
    let mut mean = vec![0.0f64; dim];
    for m in frames.clone() {
        for i in 0..m.rows() {
            for (a, &v) in mean.iter_mut().zip(m.row(i)) {
                *a += v as f64;
            }
        }
        count += m.rows();
    }
    if count == 0 {
        return None;
    }
    mean.iter_mut().for_each(|a| *a /= count as f64);
    let mut var = vec![0.0f64; dim];
    for m in frames {
        for i in 0..m.rows() {
            for ((a, &v), &mu) in var.iter_mut().zip(m.row(i)).zip(&mean) {
                let d = v as f64 - mu;
                *a += d * d;
            }
        }
    }
    let inv_std = var
        .iter()
        .map(|&v| 1.0 / (v / count as f64).max(epsilon).sqrt())
        .collect();
    Some((mean, inv_std))
}

fn apply(m: &Matrix<f32>, mean: &[f64], inv_std: &[f64]) -> Matrix<f32> {
    let mut out = m.clone();
    for i in 0..out.rows() {
        for (j, v) in out.row_mut(i).iter_mut().enumerate() {
            *v = ((*v as f64 - mean[j]) * inv_std[j]) as f32;
        }
    }
    out
}

/// Mean and variance normalization within each scope group. Returns a new corpus.
pub fn normalize(corpus: &Corpus, scope: NormalizationScope) -> Result<Corpus> {
    if !(scope.epsilon > 0.0) {
        return Err(Error::InvalidConfig("normalization epsilon must be > 0".into()));
    }
    let Some(dim) = corpus.dim() else {
        return Err(Error::EmptyScopeGroup("corpus is empty".into()));
    };
    let seqs = corpus.sequences();
    let normalized: Vec<FeatureSequence> = match scope.mode {
        NormalizationMode::None => seqs.to_vec(),
        NormalizationMode::PerUtterance => seqs
            .iter()
            .map(|s| {
                let (mean, inv) = moments(std::iter::once(&s.frames), dim, scope.epsilon)
                    .ok_or_else(|| Error::EmptyScopeGroup(s.utterance_id.clone()))?;
                Ok(FeatureSequence {
                    frames: apply(&s.frames, &mean, &inv),
                    ..s.clone()
                })
            })
            .collect::<Result<_>>()?,
        NormalizationMode::PerSpeaker => {
            let mut groups: BTreeMap<&str, Vec<&Matrix<f32>>> = BTreeMap::new();
            for s in seqs {
                if s.speaker_id.is_empty() {
                    return Err(Error::EmptyScopeGroup(format!(
                        "utterance {:?} has no speaker id",
                        s.utterance_id
                    )));
                }
                groups.entry(&s.speaker_id).or_default().push(&s.frames);
            }
            let mut stats = HashMap::new();
            for (spk, frames) in &groups {
                let st = moments(frames.iter().copied(), dim, scope.epsilon)
                    .ok_or_else(|| Error::EmptyScopeGroup(format!("speaker {spk:?}")))?;
                stats.insert(*spk, st);
            }
            seqs.iter()
                .map(|s| {
                    let (mean, inv) = &stats[s.speaker_id.as_str()];
                    FeatureSequence {
                        frames: apply(&s.frames, mean, inv),
                        ..s.clone()
                    }
                })
                .collect()
        }
    };
    Corpus::new(normalized)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WordSegment {
    pub source: String,
    pub speaker: String,
    pub label: String,
    pub start_frame: usize,
    pub end_frame: usize,
    pub frames: Matrix<f32>,
}

impl WordSegment {
    fn key(&self) -> (&str, usize, usize) {
        (&self.source, self.start_frame, self.end_frame)
    }
}

/// One segment per word alignment, in corpus then alignment order.
pub fn extract_segments(corpus: &Corpus) -> Result<Vec<WordSegment>> {
    let mut out = Vec::new();
    for s in corpus.sequences() {
        for w in &s.words {
            check_alignment(s, w)?;
            out.push(WordSegment {
                source: s.utterance_id.clone(),
                speaker: s.speaker_id.clone(),
                label: w.label.clone(),
                start_frame: w.start,
                end_frame: w.end,
                frames: s.frames.slice_rows(w.start, w.end),
            });
        }
    }
    Ok(out)
}

/// Index form of [`sample_pairs`].
pub fn sample_pair_indices(
    segments: &[WordSegment],
    n_pairs: usize,
    seed: u64,
) -> Result<Vec<(usize, usize)>> {
    if !n_pairs.is_multiple_of(2) {
        return Err(Error::OddPairCountRequested(n_pairs));
    }
    // Distinct instances per label; duplicates of the same (source, start, end)
    // are not positive pairs.
    let mut by_label: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    let mut seen = HashSet::new();
    for (i, s) in segments.iter().enumerate() {
        if seen.insert(s.key()) {
            by_label.entry(&s.label).or_default().push(i);
        }
    }
    let groups: Vec<(&Vec<usize>, u64)> = by_label
        .values()
        .map(|v| {
            let m = v.len() as u64;
            (v, m * m.saturating_sub(1) / 2)
        })
        .filter(|(_, c)| *c > 0)
        .collect();
    let total: u64 = groups.iter().map(|(_, c)| c).sum();
    if total == 0 {
        return Err(Error::NoPositivePairsAvailable);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs / 2 {
        let mut k = rng.gen_range(0..total);
        let (members, _) = groups
            .iter()
            .find(|(_, c)| {
                if k < *c {
                    true
                } else {
                    k -= c;
                    false
                }
            })
            .expect("k < total");
        let (i, j) = unrank_pair(k, members.len() as u64);
        let (a, b) = (members[i as usize], members[j as usize]);
        out.push((a, b));
        out.push((b, a));
    }
    Ok(out)
}

/// Maps `k ∈ [0, m(m−1)/2)` to the k-th pair `(i, j)`, `i < j`, in lexicographic order.
fn unrank_pair(mut k: u64, m: u64) -> (u64, u64) {
    let mut i = 0;
    loop {
        let row = m - 1 - i;
        if k < row {
            return (i, i + 1 + k);
        }
        k -= row;
        i += 1;
    }
}

/// Samples same-label pairs uniformly (with replacement) and emits both
/// orderings of each, so the output has exactly `n_pairs` entries.
pub fn sample_pairs(
    segments: &[WordSegment],
    n_pairs: usize,
    seed: u64,
) -> Result<Vec<(WordSegment, WordSegment)>> {
    Ok(sample_pair_indices(segments, n_pairs, seed)?
        .into_iter()
        .map(|(a, b)| (segments[a].clone(), segments[b].clone()))
        .collect())
}
