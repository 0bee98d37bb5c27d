//! Cosine-distance dynamic time warping.
//!
//! Local distance is `(1 − cos(a_i, b_j)) / 2`, steps are `(1,0)`, `(0,1)` and
//! `(1,1)` without weights, and the cost of a path is its distance sum divided
//! by its length. The reported cost is the minimum of that ratio over all
//! admissible paths. A plain min-sum recursion does not minimize a ratio, so
//! the search alternates a min-sum pass over `d − λ` with `λ ← ratio(best path)`
//! until no path has a lower ratio (Dinkelbach's method). Every iteration
//! strictly lowers `λ`, so the loop ends after finitely many passes; in practice
//! two to four.

use crate::error::{Error, Result};
use crate::nn::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct DtwResult {
    /// Path-length-normalized alignment cost in `[0, 1]`.
    pub cost: f64,
    /// `(template index, searched index)` pairs from the first to the last template frame.
    pub path: Vec<(usize, usize)>,
    /// Matched frames `[start, end)` of the second (searched) sequence.
    pub region: (usize, usize),
}

/// Frames widened to f64 with their squared norms, validated once and reused
/// across alignments.
#[derive(Debug, Clone)]
pub struct DtwFrames {
    rows: usize,
    dim: usize,
    values: Vec<f64>,
    sq_norms: Vec<f64>,
}

impl DtwFrames {
    pub fn new(frames: &Matrix<f32>, which: &'static str) -> Result<Self> {
        if frames.rows() == 0 {
            return Err(Error::EmptySequence);
        }
        let dim = frames.cols();
        let values: Vec<f64> = frames.as_slice().iter().map(|&v| v as f64).collect();
        let mut sq_norms = Vec::with_capacity(frames.rows());
        for (i, row) in values.chunks_exact(dim.max(1)).enumerate() {
            let n: f64 = row.iter().map(|v| v * v).sum();
            if !(n > 0.0) || !n.is_finite() {
                return Err(Error::ZeroNormFrame { which, index: i });
            }
            sq_norms.push(n);
        }
        if sq_norms.len() != frames.rows() {
            return Err(Error::ZeroNormFrame { which, index: 0 });
        }
        Ok(DtwFrames {
            rows: frames.rows(),
            dim,
            values,
            sq_norms,
        })
    }

    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

/// Local distance matrix, row-major `a.len() × b.len()`.
fn distances(a: &DtwFrames, b: &DtwFrames) -> Result<Vec<f64>> {
    if a.dim != b.dim {
        return Err(Error::DimMismatch {
            expected: a.dim,
            found: b.dim,
        });
    }
    let mut d = Vec::with_capacity(a.rows * b.rows);
    for i in 0..a.rows {
        let ai = a.row(i);
        for j in 0..b.rows {
            let dot: f64 = ai.iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
            let cos = dot / (a.sq_norms[i] * b.sq_norms[j]).sqrt();
            d.push(((1.0 - cos) / 2.0).clamp(0.0, 1.0));
        }
    }
    Ok(d)
}

const START: u8 = 0;
const DIAG: u8 = 1;
const UP: u8 = 2;
const LEFT: u8 = 3;

/// Min-sum path over `d − λ`. With `free_ends`, the path may start anywhere
/// in the first row and end anywhere in the last row.
fn min_sum_path(d: &[f64], ta: usize, tb: usize, lambda: f64, free_ends: bool) -> Vec<(usize, usize)> {
    let mut acc = vec![0.0f64; ta * tb];
    let mut back = vec![START; ta * tb];
    for i in 0..ta {
        for j in 0..tb {
            let c = d[i * tb + j] - lambda;
            let idx = i * tb + j;
            let mut best = f64::INFINITY;
            let mut from = START;
            if i == 0 && (j == 0 || free_ends) {
                best = 0.0;
            }
            if i > 0 && j > 0 && acc[idx - tb - 1] < best {
                best = acc[idx - tb - 1];
                from = DIAG;
            }
            if i > 0 && acc[idx - tb] < best {
                best = acc[idx - tb];
                from = UP;
            }
            if j > 0 && acc[idx - 1] < best {
                best = acc[idx - 1];
                from = LEFT;
            }
            acc[idx] = c + best;
            back[idx] = from;
        }
    }
    let last = (ta - 1) * tb;
    let end_j = if free_ends {
        (0..tb).fold(0, |bj, j| if acc[last + j] < acc[last + bj] { j } else { bj })
    } else {
        tb - 1
    };
    let mut path = Vec::with_capacity(ta + tb);
    let (mut i, mut j) = (ta - 1, end_j);
    loop {
        path.push((i, j));
        match back[i * tb + j] {
            START => break,
            DIAG => {
                i -= 1;
                j -= 1;
            }
            UP => i -= 1,
            _ => j -= 1,
        }
    }
    path.reverse();
    path
}

fn path_ratio(d: &[f64], tb: usize, path: &[(usize, usize)]) -> f64 {
    let sum = path.iter().fold(0.0, |acc, &(i, j)| acc + d[i * tb + j]);
    sum / path.len() as f64
}

fn align(a: &DtwFrames, b: &DtwFrames, free_ends: bool) -> Result<DtwResult> {
    let d = distances(a, b)?;
    let (ta, tb) = (a.rows, b.rows);
    let mut path = min_sum_path(&d, ta, tb, 0.0, free_ends);
    let mut lambda = path_ratio(&d, tb, &path);
    for _ in 0..1000 {
        let candidate = min_sum_path(&d, ta, tb, lambda, free_ends);
        let ratio = path_ratio(&d, tb, &candidate);
        if ratio < lambda {
            lambda = ratio;
            path = candidate;
        } else {
            break;
        }
    }
    let region = (path[0].1, path[path.len() - 1].1 + 1);
    Ok(DtwResult {
        cost: lambda,
        path,
        region,
    })
}

/// Full alignment of `a` against `b` from `(0, 0)` to `(T_a − 1, T_b − 1)`.
pub fn dtw_cost(a: &Matrix<f32>, b: &Matrix<f32>) -> Result<DtwResult> {
    align(&DtwFrames::new(a, "a")?, &DtwFrames::new(b, "b")?, false)
}

/// Best alignment of the whole template against a contiguous region of the utterance.
pub fn dtw_search(template: &Matrix<f32>, utterance: &Matrix<f32>) -> Result<DtwResult> {
    search_prepared(
        &DtwFrames::new(template, "template")?,
        &DtwFrames::new(utterance, "utterance")?,
    )
}

pub fn search_prepared(template: &DtwFrames, utterance: &DtwFrames) -> Result<DtwResult> {
    align(template, utterance, true)
}
