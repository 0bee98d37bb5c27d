use crate::error::{Error, Result};
use crate::nn::tensor::norm;
use crate::nn::{Matrix, Real};

/// NT-Xent value plus gradients w.r.t. both embedding matrices.
#[derive(Debug, Clone)]
pub struct NtXent<T> {
    pub loss: T,
    pub d_anchors: Matrix<T>,
    pub d_positives: Matrix<T>,
}

fn unit_rows<T: Real>(m: &Matrix<T>, offset: usize) -> Result<(Matrix<T>, Vec<T>)> {
    let mut out = m.clone();
    let mut norms = Vec::with_capacity(m.rows());
    for i in 0..m.rows() {
        let n = norm(m.row(i));
        if !(n > T::zero()) {
            return Err(Error::ZeroNormEmbedding(offset + i));
        }
        out.row_mut(i).iter_mut().for_each(|v| *v /= n);
        norms.push(n);
    }
    Ok((out, norms))
}

/// Back through `û = u / |u|`: `du = (dû − (dû·û) û) / |u|`.
fn through_normalization<T: Real>(d_unit: &Matrix<T>, unit: &Matrix<T>, norms: &[T]) -> Matrix<T> {
    let mut out = d_unit.clone();
    for i in 0..out.rows() {
        let u = unit.row(i);
        let proj = d_unit.row(i).iter().zip(u).map(|(&a, &b)| a * b).sum::<T>();
        for (o, &ui) in out.row_mut(i).iter_mut().zip(u) {
            *o = (*o - proj * ui) / norms[i];
        }
    }
    out
}

/// Normalized temperature-scaled cross entropy over `N` positive pairs, summed
/// over pairs.
///
/// For anchor `i` the candidates are all `N` positives and the `N − 1` other
/// anchors; similarities are cosine, divided by `temperature`.
pub fn nt_xent<T: Real>(
    anchors: &Matrix<T>,
    positives: &Matrix<T>,
    temperature: f64,
) -> Result<NtXent<T>> {
    if anchors.shape() != positives.shape() {
        return Err(Error::ShapeMismatch(format!(
            "anchors {:?} vs positives {:?}",
            anchors.shape(),
            positives.shape()
        )));
    }
    if anchors.rows() == 0 {
        return Err(Error::InvalidLength(0));
    }
    if !(temperature > 0.0) {
        return Err(Error::InvalidConfig("temperature must be > 0".into()));
    }
    let n = anchors.rows();
    let (a_hat, a_norm) = unit_rows(anchors, 0)?;
    let (p_hat, p_norm) = unit_rows(positives, n)?;
    let s_ap = a_hat.matmul_t(&p_hat);
    let s_aa = a_hat.matmul_t(&a_hat);
    let inv_tau = T::c(1.0 / temperature);

    let mut loss = T::zero();
    let mut d_ap = Matrix::zeros(n, n);
    let mut d_aa = Matrix::zeros(n, n);
    for i in 0..n {
        let logits_p: Vec<T> = s_ap.row(i).iter().map(|&s| s * inv_tau).collect();
        let logits_a: Vec<T> = s_aa.row(i).iter().map(|&s| s * inv_tau).collect();
        let max = logits_p
            .iter()
            .chain(logits_a.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| v))
            .copied()
            .fold(T::neg_infinity(), T::max);
        let mut denom = T::zero();
        for &l in &logits_p {
            denom += (l - max).exp();
        }
        for (j, &l) in logits_a.iter().enumerate() {
            if j != i {
                denom += (l - max).exp();
            }
        }
        let lse = max + denom.ln();
        loss += lse - logits_p[i];
        for k in 0..n {
            let prob = (logits_p[k] - lse).exp();
            let delta = if k == i { T::one() } else { T::zero() };
            d_ap.set(i, k, (prob - delta) * inv_tau);
        }
        for j in 0..n {
            if j != i {
                d_aa.set(i, j, (logits_a[j] - lse).exp() * inv_tau);
            }
        }
    }
    // s_ap = Â P̂ᵀ and s_aa = Â Âᵀ
    let mut d_a_hat = d_ap.matmul(&p_hat);
    d_a_hat.add_assign(&d_aa.matmul(&a_hat));
    d_a_hat.add_assign(&d_aa.t_matmul(&a_hat));
    let d_p_hat = d_ap.t_matmul(&a_hat);
    Ok(NtXent {
        loss,
        d_anchors: through_normalization(&d_a_hat, &a_hat, &a_norm),
        d_positives: through_normalization(&d_p_hat, &p_hat, &p_norm),
    })
}

pub fn nt_xent_loss<T: Real>(anchors: &Matrix<T>, positives: &Matrix<T>, temperature: f64) -> Result<T> {
    Ok(nt_xent(anchors, positives, temperature)?.loss)
}

/// Mean squared error over all entries and its gradient w.r.t. `decoded`.
pub fn reconstruction<T: Real>(decoded: &Matrix<T>, target: &Matrix<T>) -> Result<(T, Matrix<T>)> {
    if decoded.shape() != target.shape() {
        return Err(Error::ShapeMismatch(format!(
            "decoded {:?} vs target {:?}",
            decoded.shape(),
            target.shape()
        )));
    }
    let count = decoded.as_slice().len();
    if count == 0 {
        return Err(Error::InvalidLength(0));
    }
    let inv = T::c(1.0 / count as f64);
    let mut grad = Matrix::zeros(decoded.rows(), decoded.cols());
    let mut sum = T::zero();
    for ((g, &d), &t) in grad
        .as_mut_slice()
        .iter_mut()
        .zip(decoded.as_slice())
        .zip(target.as_slice())
    {
        let diff = d - t;
        sum += diff * diff;
        *g = T::c(2.0) * diff * inv;
    }
    Ok((sum * inv, grad))
}

pub fn reconstruction_loss<T: Real>(decoded: &Matrix<T>, target: &Matrix<T>) -> Result<T> {
    Ok(reconstruction(decoded, target)?.0)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn m(rows: &[Vec<f64>]) -> Matrix<f64> {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn single_pair_has_zero_loss() {
        let a = m(&[vec![0.3, -1.0, 2.0]]);
        let p = m(&[vec![-5.0, 0.1, 0.0]]);
        assert_eq!(nt_xent_loss(&a, &p, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn two_orthogonal_pairs_hand_value() {
        let a = m(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let l = nt_xent_loss(&a, &a.clone(), 1.0).unwrap();
        let per_pair = (1.0 + 2.0 / std::f64::consts::E).ln();
        assert!((per_pair - 0.55145).abs() < 1e-5);
        assert!((l - 2.0 * per_pair).abs() < 1e-12);
    }

    #[test]
    fn scaling_one_embedding_leaves_loss_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rand_m = |rng: &mut ChaCha8Rng| {
            Matrix::<f64>::from_vec(4, 3, (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
        };
        let a = rand_m(&mut rng);
        let p = rand_m(&mut rng);
        let base = nt_xent_loss(&a, &p, 0.5).unwrap();
        let mut scaled = a.clone();
        scaled.row_mut(2).iter_mut().for_each(|v| *v *= 7.5);
        assert!((nt_xent_loss(&scaled, &p, 0.5).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn zero_norm_embedding_is_an_error() {
        let a = m(&[vec![1.0, 0.0], vec![0.0, 0.0]]);
        let p = m(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(matches!(nt_xent_loss(&a, &p, 0.1), Err(Error::ZeroNormEmbedding(1))));
        assert!(matches!(nt_xent_loss(&p, &a, 0.1), Err(Error::ZeroNormEmbedding(3))));
    }

    #[test]
    fn reconstruction_examples() {
        let t = m(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![-1.0, 0.5]]);
        assert_eq!(reconstruction_loss(&t, &t).unwrap(), 0.0);
        let shifted = t.map(|v| v + 1.0);
        assert_eq!(reconstruction_loss(&shifted, &t).unwrap(), 1.0);
        let d = m(&[vec![0.0, 2.5], vec![3.0, 1.0], vec![-2.0, 0.0]]);
        // (1 + 0.25 + 0 + 9 + 1 + 0.25) / 6
        assert!((reconstruction_loss(&d, &t).unwrap() - 11.5 / 6.0).abs() < 1e-15);
        assert!(matches!(
            reconstruction_loss(&d, &t.slice_rows(0, 2)),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
