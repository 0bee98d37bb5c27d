//! Query-by-example keyword search.
//!
//! Each search utterance is cut into overlapping windows, every window and
//! every keyword template is embedded, and an utterance's score for a keyword
//! is the highest cosine similarity over all (template, window) pairs.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, FeatureSequence};
use crate::dtw::{search_prepared, DtwFrames};
use crate::embed::Embedder;
use crate::error::{Error, Result};
use crate::nn::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    pub min_len: usize,
    pub max_len: usize,
    pub len_step: usize,
    pub stride: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            min_len: 10,
            max_len: 65,
            len_step: 5,
            stride: 5,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_len == 0 || self.min_len > self.max_len || self.stride == 0 || self.len_step == 0 {
            return Err(Error::InvalidConfig(format!("bad window config {self:?}")));
        }
        Ok(())
    }
}

/// `(start, length)` windows over `n_frames` frames, length-major then by start.
pub fn generate_windows(n_frames: usize, cfg: &WindowConfig) -> Vec<(usize, usize)> {
    if n_frames < cfg.min_len {
        return vec![(0, n_frames)];
    }
    let mut out = Vec::new();
    let mut len = cfg.min_len;
    while len <= cfg.max_len && len <= n_frames {
        let mut start = 0;
        while start + len <= n_frames {
            out.push((start, len));
            start += cfg.stride;
        }
        len += cfg.len_step;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeywordTemplateSet {
    pub keyword: String,
    pub templates: Vec<FeatureSequence>,
}

impl KeywordTemplateSet {
    pub fn new(keyword: impl Into<String>, templates: Vec<FeatureSequence>) -> Result<Self> {
        let keyword = keyword.into();
        if templates.is_empty() {
            return Err(Error::InvalidConfig(format!("keyword {keyword:?} has no templates")));
        }
        Ok(KeywordTemplateSet { keyword, templates })
    }

    /// Groups a template corpus by the label of each utterance's first word
    /// alignment. Utterances without alignments are skipped.
    pub fn from_corpus(corpus: &Corpus) -> Vec<KeywordTemplateSet> {
        let mut groups: BTreeMap<&str, Vec<FeatureSequence>> = BTreeMap::new();
        for seq in corpus.sequences() {
            if let Some(w) = seq.words.first() {
                groups.entry(w.label.as_str()).or_default().push(seq.clone());
            }
        }
        groups
            .into_iter()
            .map(|(k, templates)| KeywordTemplateSet {
                keyword: k.to_string(),
                templates,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub keyword: String,
    pub utterance_id: String,
    pub score: f64,
    /// `(start, length)`.
    pub best_window: (usize, usize),
    pub best_template: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedDetections {
    pub keyword: String,
    pub detections: Vec<Detection>,
}

impl RankedDetections {
    /// Sorts by descending score, ties by ascending utterance id.
    pub fn new(keyword: impl Into<String>, mut detections: Vec<Detection>) -> Self {
        sort_detections(&mut detections);
        RankedDetections {
            keyword: keyword.into(),
            detections,
        }
    }
}

pub fn sort_detections(d: &mut [Detection]) {
    d.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.utterance_id.cmp(&b.utterance_id))
    });
}

/// Embeddings plus squared norms, so that cosine needs a single dot product.
struct Embedded {
    vectors: Vec<Vec<f32>>,
    sq_norms: Vec<f64>,
}

impl Embedded {
    fn new(vectors: Vec<Vec<f32>>) -> Self {
        let sq_norms = vectors
            .iter()
            .map(|v| v.iter().map(|&x| (x as f64) * (x as f64)).sum())
            .collect();
        Embedded { vectors, sq_norms }
    }
}

/// Cosine similarity; a zero vector is dissimilar (0) to everything.
fn similarity(a: &[f32], aa: f64, b: &[f32], bb: f64) -> f64 {
    if aa == 0.0 || bb == 0.0 {
        return 0.0;
    }
    let ab: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    (ab / (aa * bb).sqrt()).clamp(-1.0, 1.0)
}

fn embed_checked(embedder: &dyn Embedder, frames: &Matrix<f32>, what: &str) -> Result<Vec<f32>> {
    let v = embedder.embed_frames(frames)?;
    if !v.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFiniteValue(format!("{} embedding of {what}", embedder.id())));
    }
    Ok(v)
}

struct UtteranceWindows {
    windows: Vec<(usize, usize)>,
    embedded: Embedded,
}

fn embed_windows(embedder: &dyn Embedder, seq: &FeatureSequence, cfg: &WindowConfig) -> Result<UtteranceWindows> {
    if seq.n_frames() == 0 {
        return Err(Error::EmptySequence);
    }
    let windows = generate_windows(seq.n_frames(), cfg);
    let vectors = windows
        .iter()
        .map(|&(s, l)| {
            embed_checked(
                embedder,
                &seq.frames.slice_rows(s, s + l),
                &format!("{:?}[{s}, {})", seq.utterance_id, s + l),
            )
        })
        .collect::<Result<_>>()?;
    Ok(UtteranceWindows {
        windows,
        embedded: Embedded::new(vectors),
    })
}

fn embed_templates(embedder: &dyn Embedder, set: &KeywordTemplateSet) -> Result<Embedded> {
    if set.templates.is_empty() {
        return Err(Error::InvalidConfig(format!("keyword {:?} has no templates", set.keyword)));
    }
    let vectors = set
        .templates
        .iter()
        .map(|t| {
            if t.n_frames() == 0 {
                return Err(Error::EmptySequence);
            }
            embed_checked(embedder, &t.frames, &format!("template {:?}", t.utterance_id))
        })
        .collect::<Result<_>>()?;
    Ok(Embedded::new(vectors))
}

/// Best (template, window) pair: strict improvement only, so ties keep the
/// lowest template index and then the earliest window.
fn best_match(keyword: &str, utterance_id: &str, templates: &Embedded, windows: &UtteranceWindows) -> Detection {
    let mut best = (f64::NEG_INFINITY, 0, 0);
    for (ti, (t, &tt)) in templates.vectors.iter().zip(&templates.sq_norms).enumerate() {
        for (wi, (w, &ww)) in windows.embedded.vectors.iter().zip(&windows.embedded.sq_norms).enumerate() {
            let s = similarity(t, tt, w, ww);
            if s > best.0 {
                best = (s, ti, wi);
            }
        }
    }
    Detection {
        keyword: keyword.to_string(),
        utterance_id: utterance_id.to_string(),
        score: best.0,
        best_window: windows.windows[best.2],
        best_template: best.1,
    }
}

fn check_dims(keywords: &[KeywordTemplateSet], dim: usize) -> Result<()> {
    for t in keywords.iter().flat_map(|k| &k.templates) {
        if t.dim() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                found: t.dim(),
            });
        }
    }
    Ok(())
}

pub fn score_keyword(
    templates: &KeywordTemplateSet,
    utterance: &FeatureSequence,
    embedder: &dyn Embedder,
    cfg: &WindowConfig,
) -> Result<Detection> {
    cfg.validate()?;
    check_dims(std::slice::from_ref(templates), utterance.dim())?;
    let t = embed_templates(embedder, templates)?;
    let w = embed_windows(embedder, utterance, cfg)?;
    Ok(best_match(&templates.keyword, &utterance.utterance_id, &t, &w))
}

/// Scores every keyword against every utterance. Window embeddings are
/// computed once per utterance and shared by all keywords.
pub fn search(
    keywords: &[KeywordTemplateSet],
    corpus: &Corpus,
    embedder: &dyn Embedder,
    cfg: &WindowConfig,
) -> Result<Vec<RankedDetections>> {
    cfg.validate()?;
    if let Some(dim) = corpus.dim() {
        check_dims(keywords, dim)?;
    }
    let utterances = corpus.sequences();
    let cache: Vec<UtteranceWindows> = utterances
        .par_iter()
        .map(|u| embed_windows(embedder, u, cfg))
        .collect::<Result<_>>()?;
    keywords
        .iter()
        .map(|k| {
            let t = embed_templates(embedder, k)?;
            let detections = utterances
                .par_iter()
                .zip(&cache)
                .map(|(u, w)| best_match(&k.keyword, &u.utterance_id, &t, w))
                .collect();
            Ok(RankedDetections::new(k.keyword.clone(), detections))
        })
        .collect()
}

/// Subsequence-DTW baseline: score is `1 − cost`, maximized over templates;
/// `best_window` is the matched region.
pub fn dtw_search_all(keywords: &[KeywordTemplateSet], corpus: &Corpus) -> Result<Vec<RankedDetections>> {
    if let Some(dim) = corpus.dim() {
        check_dims(keywords, dim)?;
    }
    let utterances: Vec<DtwFrames> = corpus
        .sequences()
        .par_iter()
        .map(|u| DtwFrames::new(&u.frames, "utterance"))
        .collect::<Result<_>>()?;
    keywords
        .iter()
        .map(|k| {
            if k.templates.is_empty() {
                return Err(Error::InvalidConfig(format!("keyword {:?} has no templates", k.keyword)));
            }
            let templates: Vec<DtwFrames> = k
                .templates
                .iter()
                .map(|t| DtwFrames::new(&t.frames, "template"))
                .collect::<Result<_>>()?;
            let detections = corpus
                .sequences()
                .par_iter()
                .zip(&utterances)
                .map(|(u, uf)| {
                    let mut best: Option<Detection> = None;
                    for (ti, tf) in templates.iter().enumerate() {
                        let r = search_prepared(tf, uf)?;
                        let score = 1.0 - r.cost;
                        if best.as_ref().is_none_or(|b| score > b.score) {
                            best = Some(Detection {
                                keyword: k.keyword.clone(),
                                utterance_id: u.utterance_id.clone(),
                                score,
                                best_window: (r.region.0, r.region.1 - r.region.0),
                                best_template: ti,
                            });
                        }
                    }
                    Ok(best.expect("at least one template"))
                })
                .collect::<Result<_>>()?;
            Ok(RankedDetections::new(k.keyword.clone(), detections))
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct DetectionRecord {
    keyword: String,
    utterance_id: String,
    score: f64,
    window_start: usize,
    window_len: usize,
    template_index: usize,
}

/// One JSON record per line, keywords in the given order, each keyword's
/// detections in ranked order.
pub fn write_detections(path: &Path, rankings: &[RankedDetections]) -> Result<()> {
    let mut out = Vec::new();
    for r in rankings {
        for d in &r.detections {
            let rec = DetectionRecord {
                keyword: d.keyword.clone(),
                utterance_id: d.utterance_id.clone(),
                score: d.score,
                window_start: d.best_window.0,
                window_len: d.best_window.1,
                template_index: d.best_template,
            };
            serde_json::to_writer(&mut out, &rec).expect("record serializes");
            out.push(b'\n');
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn read_detections(path: &Path) -> Result<Vec<RankedDetections>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DetectionRecord = serde_json::from_str(&line).map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if !groups.contains_key(&rec.keyword) {
            order.push(rec.keyword.clone());
        }
        groups.entry(rec.keyword.clone()).or_default().push(Detection {
            keyword: rec.keyword,
            utterance_id: rec.utterance_id,
            score: rec.score,
            best_window: (rec.window_start, rec.window_len),
            best_template: rec.template_index,
        });
    }
    Ok(order
        .into_iter()
        .map(|k| {
            let d = groups.remove(&k).unwrap_or_default();
            RankedDetections::new(k, d)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicUsize, Ordering};

    use super::*;
    use crate::embed::Meanpool;

    fn seq(id: &str, rows: &[Vec<f32>]) -> FeatureSequence {
        FeatureSequence::new(id, "s", Matrix::from_rows(rows).unwrap())
    }

    #[test]
    fn window_examples() {
        let cfg = WindowConfig::default();
        let w = generate_windows(30, &cfg);
        assert_eq!(w.len(), 15);
        let per_len: Vec<usize> = [10, 15, 20, 25, 30]
            .iter()
            .map(|&l| w.iter().filter(|x| x.1 == l).count())
            .collect();
        assert_eq!(per_len, vec![5, 4, 3, 2, 1]);
        assert_eq!(w[0], (0, 10));
        assert_eq!(w[5], (0, 15));
        assert_eq!(generate_windows(8, &cfg), vec![(0, 8)]);
        assert_eq!(generate_windows(10, &cfg), vec![(0, 10)]);
    }

    #[test]
    fn utterance_equal_to_template_scores_one() {
        let rows: Vec<Vec<f32>> = (0..15).map(|i| vec![1.0 + i as f32, 0.5, -0.25 * i as f32]).collect();
        let t = KeywordTemplateSet::new("k", vec![seq("t", &rows)]).unwrap();
        let d = score_keyword(&t, &seq("u", &rows), &Meanpool, &WindowConfig::default()).unwrap();
        assert_eq!(d.score, 1.0);
        assert_eq!(d.best_window, (0, 15));
    }

    #[test]
    fn orthogonal_utterance_scores_zero() {
        let t = KeywordTemplateSet::new("k", vec![seq("t", &vec![vec![1.0, 0.0, 0.0]; 10])]).unwrap();
        let u: Vec<Vec<f32>> = (0..20).map(|i| vec![0.0, (i % 3) as f32, 1.0]).collect();
        let d = score_keyword(&t, &seq("u", &u), &Meanpool, &WindowConfig::default()).unwrap();
        assert_eq!(d.score, 0.0);
    }

    struct Counting(AtomicUsize);

    impl Embedder for Counting {
        fn id(&self) -> &str {
            "counting"
        }
        fn output_dim(&self, d: usize) -> usize {
            d
        }
        fn embed_frames(&self, frames: &Matrix<f32>) -> Result<Vec<f32>> {
            self.0.fetch_add(1, Ordering::SeqCst);
            crate::embed::meanpool(frames)
        }
    }

    #[test]
    fn window_embeddings_are_shared_across_keywords() {
        let mk = |id: &str, n: usize, phase: f32| {
            seq(id, &(0..n).map(|i| vec![(i as f32 + phase).sin(), 1.0]).collect::<Vec<_>>())
        };
        let corpus = Corpus::new(vec![mk("a", 30, 0.0), mk("b", 22, 1.0), mk("c", 8, 2.0)]).unwrap();
        let keywords = vec![
            KeywordTemplateSet::new("x", vec![mk("t1", 10, 0.3)]).unwrap(),
            KeywordTemplateSet::new("y", vec![mk("t2", 12, 0.7), mk("t3", 11, 1.1)]).unwrap(),
        ];
        let cfg = WindowConfig::default();
        let counter = Counting(AtomicUsize::new(0));
        let out = search(&keywords, &corpus, &counter, &cfg).unwrap();
        let n_windows: usize = [30, 22, 8].iter().map(|&t| generate_windows(t, &cfg).len()).sum();
        assert_eq!(counter.0.load(Ordering::SeqCst), n_windows + 3);
        assert_eq!(out.len(), 2);
        for r in &out {
            assert_eq!(r.detections.len(), 3);
            assert!(r.detections.windows(2).all(|w| w[0].score >= w[1].score));
        }
    }

    #[test]
    fn template_dim_mismatch() {
        let corpus = Corpus::new(vec![seq("u", &vec![vec![1.0, 2.0]; 12])]).unwrap();
        let k = KeywordTemplateSet::new("k", vec![seq("t", &vec![vec![1.0, 2.0, 3.0]; 12])]).unwrap();
        assert!(matches!(
            search(std::slice::from_ref(&k), &corpus, &Meanpool, &WindowConfig::default()),
            Err(Error::DimMismatch { expected: 2, found: 3 })
        ));
        assert!(matches!(dtw_search_all(&[k], &corpus), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn planted_template_gets_dtw_score_one() {
        let t: Vec<Vec<f32>> = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        let mut u = vec![vec![-1.0, 0.2]; 3];
        u.extend(t.iter().cloned());
        let corpus = Corpus::new(vec![seq("u", &u), seq("v", &vec![vec![-1.0, 0.1]; 6])]).unwrap();
        let k = KeywordTemplateSet::new("k", vec![seq("t", &t)]).unwrap();
        let r = dtw_search_all(&[k], &corpus).unwrap();
        assert_eq!(r[0].detections[0].utterance_id, "u");
        assert_eq!(r[0].detections[0].score, 1.0);
        assert_eq!(r[0].detections[0].best_window, (3, 3));
    }

    #[test]
    fn detections_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("det.jsonl");
        let mk = |k: &str, u: &str, s: f64| Detection {
            keyword: k.into(),
            utterance_id: u.into(),
            score: s,
            best_window: (5, 10),
            best_template: 1,
        };
        let rankings = vec![
            RankedDetections::new("b", vec![mk("b", "u1", 0.1), mk("b", "u2", 0.7)]),
            RankedDetections::new("a", vec![mk("a", "u2", 0.1 + 0.2), mk("a", "u1", 0.3)]),
        ];
        write_detections(&path, &rankings).unwrap();
        assert_eq!(read_detections(&path).unwrap(), rankings);
    }
}
