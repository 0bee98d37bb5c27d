//! Ranking metrics for keyword search: per-keyword AP, P@10 and P@N, and
//! their means over keywords with enough occurrences.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::kws::{sort_detections, Detection, RankedDetections};

pub const DEFAULT_MIN_OCCURRENCES: usize = 10;

/// For each keyword, the utterances that truly contain it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    relevant: BTreeMap<String, BTreeSet<String>>,
}

#[derive(Serialize, Deserialize)]
struct TruthRecord {
    keyword: String,
    utterance_id: String,
}

impl GroundTruth {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, keyword: impl Into<String>, utterance_id: impl Into<String>) {
        self.relevant
            .entry(keyword.into())
            .or_default()
            .insert(utterance_id.into());
    }

    /// Derived from word alignments: an utterance contains every label it aligns.
    pub fn from_corpus(corpus: &Corpus) -> Self {
        let mut t = Self::new();
        for seq in corpus.sequences() {
            for w in &seq.words {
                t.insert(w.label.clone(), seq.utterance_id.clone());
            }
        }
        t
    }

    pub fn relevant(&self, keyword: &str) -> Option<&BTreeSet<String>> {
        self.relevant.get(keyword)
    }

    pub fn n_relevant(&self, keyword: &str) -> usize {
        self.relevant.get(keyword).map_or(0, BTreeSet::len)
    }

    pub fn keywords(&self) -> impl Iterator<Item = &str> {
        self.relevant.keys().map(String::as_str)
    }

    /// Fails if any listed utterance is not in `ids`.
    pub fn check_subset<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Result<()> {
        let ids: HashSet<&str> = ids.into_iter().collect();
        for (k, set) in &self.relevant {
            if let Some(u) = set.iter().find(|u| !ids.contains(u.as_str())) {
                return Err(Error::InvalidConfig(format!(
                    "ground truth for {k:?} names unknown utterance {u:?}"
                )));
            }
        }
        Ok(())
    }

    /// Line-delimited `{"keyword": .., "utterance_id": ..}` records.
    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut t = Self::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: TruthRecord = serde_json::from_str(&line).map_err(|e| Error::Manifest {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
            t.insert(rec.keyword, rec.utterance_id);
        }
        Ok(t)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (k, set) in &self.relevant {
            for u in set {
                let rec = TruthRecord {
                    keyword: k.clone(),
                    utterance_id: u.clone(),
                };
                out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
                out.push('\n');
            }
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Detections in canonical order: score descending, utterance id ascending.
fn canonical(ranked: &RankedDetections) -> Vec<Detection> {
    let mut d = ranked.detections.clone();
    sort_detections(&mut d);
    d
}

fn relevant_set<'a>(ranked: &RankedDetections, truth: &'a GroundTruth) -> Result<&'a BTreeSet<String>> {
    match truth.relevant(&ranked.keyword) {
        Some(set) if !set.is_empty() => Ok(set),
        _ => Err(Error::NoRelevantUtterances(ranked.keyword.clone())),
    }
}

/// Mean over relevant utterances of the precision at their rank. Relevant
/// utterances missing from the ranking contribute zero.
pub fn average_precision(ranked: &RankedDetections, truth: &GroundTruth) -> Result<f64> {
    let rel = relevant_set(ranked, truth)?;
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, d) in canonical(ranked).iter().enumerate() {
        if rel.contains(&d.utterance_id) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / rel.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Precision {
    pub value: f64,
    /// Denominator actually used.
    pub cutoff: usize,
    /// The ranking was shorter than the requested cutoff.
    pub truncated: bool,
}

/// Fraction of the top `cutoff` detections that are relevant. A ranking
/// shorter than `cutoff` is used whole and flagged.
pub fn precision_at(ranked: &RankedDetections, truth: &GroundTruth, cutoff: usize) -> Result<Precision> {
    let rel = relevant_set(ranked, truth)?;
    if cutoff == 0 {
        return Err(Error::InvalidLength(0));
    }
    let ordered = canonical(ranked);
    let truncated = ordered.len() < cutoff;
    let used = cutoff.min(ordered.len());
    if used == 0 {
        return Ok(Precision {
            value: 0.0,
            cutoff: 0,
            truncated,
        });
    }
    let hits = ordered[..used]
        .iter()
        .filter(|d| rel.contains(&d.utterance_id))
        .count();
    Ok(Precision {
        value: hits as f64 / used as f64,
        cutoff: used,
        truncated,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordMetrics {
    pub keyword: String,
    /// Number of utterances that contain the keyword.
    pub n: usize,
    pub kept: bool,
    pub ap: Option<f64>,
    pub p_at_10: Option<f64>,
    pub p_at_n: Option<f64>,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub min_occurrences: usize,
    pub map: f64,
    pub mean_p_at_10: f64,
    pub mean_p_at_n: f64,
    pub kept_keywords: Vec<String>,
    pub keywords: Vec<KeywordMetrics>,
}

/// Scores every ranked keyword. Keywords with fewer than `min_occurrences`
/// relevant utterances are listed but left out of the means.
pub fn evaluate(
    rankings: &[RankedDetections],
    truth: &GroundTruth,
    min_occurrences: usize,
) -> Result<MetricsReport> {
    let mut per_keyword: Vec<KeywordMetrics> = rankings
        .iter()
        .map(|r| {
            let n = truth.n_relevant(&r.keyword);
            if n == 0 {
                return Ok(KeywordMetrics {
                    keyword: r.keyword.clone(),
                    n,
                    kept: false,
                    ap: None,
                    p_at_10: None,
                    p_at_n: None,
                    truncated: false,
                });
            }
            let p10 = precision_at(r, truth, 10)?;
            let pn = precision_at(r, truth, n)?;
            Ok(KeywordMetrics {
                keyword: r.keyword.clone(),
                n,
                kept: n >= min_occurrences.max(1),
                ap: Some(average_precision(r, truth)?),
                p_at_10: Some(p10.value),
                p_at_n: Some(pn.value),
                truncated: p10.truncated || pn.truncated,
            })
        })
        .collect::<Result<_>>()?;
    per_keyword.sort_by(|a, b| a.keyword.cmp(&b.keyword));
    let kept: Vec<&KeywordMetrics> = per_keyword.iter().filter(|k| k.kept).collect();
    if kept.is_empty() {
        return Err(Error::NoKeywordsSurviveFilter(min_occurrences));
    }
    let mean = |f: fn(&KeywordMetrics) -> Option<f64>| {
        kept.iter().map(|k| f(k).unwrap_or(0.0)).sum::<f64>() / kept.len() as f64
    };
    Ok(MetricsReport {
        min_occurrences,
        map: mean(|k| k.ap),
        mean_p_at_10: mean(|k| k.p_at_10),
        mean_p_at_n: mean(|k| k.p_at_n),
        kept_keywords: kept.iter().map(|k| k.keyword.clone()).collect(),
        keywords: per_keyword,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// One row per keyword followed by a `MEAN` row over kept keywords.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("keyword\tAP\tP@10\tP@N\tN\tkept\n");
        for k in &self.keywords {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}",
                k.keyword,
                cell(k.ap),
                cell(k.p_at_10),
                cell(k.p_at_n),
                k.n,
                k.kept
            );
        }
        let _ = writeln!(
            s,
            "MEAN\t{:.6}\t{:.6}\t{:.6}\t{}\ttrue",
            self.map,
            self.mean_p_at_10,
            self.mean_p_at_n,
            self.kept_keywords.len()
        );
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ranking(keyword: &str, ids: &[&str]) -> RankedDetections {
        let n = ids.len();
        RankedDetections::new(
            keyword,
            ids.iter()
                .enumerate()
                .map(|(i, u)| Detection {
                    keyword: keyword.into(),
                    utterance_id: (*u).into(),
                    score: (n - i) as f64,
                    best_window: (0, 1),
                    best_template: 0,
                })
                .collect(),
        )
    }

    fn truth(keyword: &str, ids: &[&str]) -> GroundTruth {
        let mut t = GroundTruth::new();
        for u in ids {
            t.insert(keyword, *u);
        }
        t
    }

    #[test]
    fn hand_computed_ap() {
        let r = ranking("k", &["a", "b", "c"]);
        let ap = average_precision(&r, &truth("k", &["a", "c"])).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert_eq!(average_precision(&r, &truth("k", &["a", "b"])).unwrap(), 1.0);
    }

    #[test]
    fn precision_examples() {
        let ids: Vec<String> = (0..12).map(|i| format!("u{i:02}")).collect();
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let r = ranking("k", &refs);
        let p = precision_at(&r, &truth("k", &refs[..10]), 10).unwrap();
        assert_eq!((p.value, p.truncated), (1.0, false));
        let t = truth("k", &["u00", "u01", "u03", "u07"]);
        assert_eq!(precision_at(&r, &t, 4).unwrap().value, 0.75);
        let short = ranking("k", &refs[..5]);
        let p = precision_at(&short, &truth("k", &["u00"]), 10).unwrap();
        assert_eq!((p.value, p.cutoff, p.truncated), (0.2, 5, true));
    }

    #[test]
    fn no_relevant_is_an_error() {
        let r = ranking("k", &["a"]);
        assert!(matches!(
            average_precision(&r, &truth("other", &["a"])),
            Err(Error::NoRelevantUtterances(_))
        ));
    }

    #[test]
    fn evaluate_examples() {
        let ids: Vec<String> = (0..30).map(|i| format!("u{i:02}")).collect();
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let r = ranking("k", &refs);
        let t = truth("k", &refs[..12]);
        let rep = evaluate(std::slice::from_ref(&r), &t, 10).unwrap();
        assert_eq!((rep.map, rep.mean_p_at_10, rep.mean_p_at_n), (1.0, 1.0, 1.0));

        // second keyword: relevant at ranks 2, 4, ..., 24 -> AP 0.5
        let mut t2 = t.clone();
        for u in refs.iter().skip(1).step_by(2).take(12) {
            t2.insert("j", *u);
        }
        let rep = evaluate(&[r.clone(), ranking("j", &refs)], &t2, 10).unwrap();
        assert_eq!(rep.keywords[0].ap, Some(0.5));
        assert_eq!(rep.map, 0.75);

        let t9 = truth("k", &refs[..9]);
        assert!(matches!(evaluate(std::slice::from_ref(&r), &t9, 10), Err(Error::NoKeywordsSurviveFilter(10))));
        let mut mixed = t9.clone();
        for u in &refs[..12] {
            mixed.insert("j", *u);
        }
        let rep = evaluate(&[r, ranking("j", &refs)], &mixed, 10).unwrap();
        assert_eq!(rep.kept_keywords, vec!["j".to_string()]);
        assert_eq!(rep.keywords.len(), 2);
        assert!(!rep.keywords[1].kept);
    }
}
