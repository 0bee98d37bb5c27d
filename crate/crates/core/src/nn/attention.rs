//! Masked multi-head self-attention and pre-norm transformer blocks.

use rand_chacha::ChaCha8Rng;

use super::layers::{
    softmax_backward, softmax_rows_masked, FeedForward, FeedForwardCache, LayerNorm,
    LayerNormCache, Linear,
};
use super::params::{Gradients, ParameterStore};
use super::tensor::{Matrix, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub n_heads: usize,
    pub dim: usize,
}

#[derive(Debug, Clone)]
pub struct AttentionCache<T> {
    x: Matrix<T>,
    q: Matrix<T>,
    k: Matrix<T>,
    v: Matrix<T>,
    probs: Vec<Matrix<T>>,
    context: Matrix<T>,
}

impl<T> AttentionCache<T> {
    /// Attention weights of head `h`, one row per query position.
    pub fn weights(&self, h: usize) -> &Matrix<T> {
        &self.probs[h]
    }
}

impl MultiHeadAttention {
    pub fn new<T: Real>(
        store: &mut ParameterStore<T>,
        name: &str,
        dim: usize,
        n_heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(n_heads > 0 && dim.is_multiple_of(n_heads), "dim must divide into heads");
        MultiHeadAttention {
            query: Linear::new(store, &format!("{name}.query"), dim, dim, rng),
            // a key bias shifts all of a query's scores equally and softmax ignores it
            key: Linear::without_bias(store, &format!("{name}.key"), dim, dim, rng),
            value: Linear::new(store, &format!("{name}.value"), dim, dim, rng),
            output: Linear::new(store, &format!("{name}.output"), dim, dim, rng),
            n_heads,
            dim,
        }
    }

    fn head_dim(&self) -> usize {
        self.dim / self.n_heads
    }

    /// Self-attention over the rows of `x`. Keys at positions `>= key_len` are
    /// masked out and receive weight exactly 0.
    pub fn forward<T: Real>(
        &self,
        p: &ParameterStore<T>,
        x: &Matrix<T>,
        key_len: usize,
    ) -> (Matrix<T>, AttentionCache<T>) {
        let q = self.query.forward(p, x);
        let k = self.key.forward(p, x);
        let v = self.value.forward(p, x);
        let hd = self.head_dim();
        let scale = T::c(1.0 / (hd as f64).sqrt());
        let mut context = Matrix::zeros(x.rows(), self.dim);
        let mut probs = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let (lo, hi) = (h * hd, (h + 1) * hd);
            let qh = q.slice_cols(lo, hi);
            let kh = k.slice_cols(lo, hi);
            let vh = v.slice_cols(lo, hi);
            let mut scores = qh.matmul_t(&kh);
            scores.scale(scale);
            softmax_rows_masked(&mut scores, key_len);
            context.set_cols(lo, &scores.matmul(&vh));
            probs.push(scores);
        }
        let out = self.output.forward(p, &context);
        (
            out,
            AttentionCache {
                x: x.clone(),
                q,
                k,
                v,
                probs,
                context,
            },
        )
    }

    pub fn backward<T: Real>(
        &self,
        p: &ParameterStore<T>,
        cache: &AttentionCache<T>,
        dy: &Matrix<T>,
        g: &mut Gradients<T>,
    ) -> Matrix<T> {
        let dcontext = self.output.backward(p, &cache.context, dy, g);
        let hd = self.head_dim();
        let scale = T::c(1.0 / (hd as f64).sqrt());
        let rows = cache.x.rows();
        let mut dq = Matrix::zeros(rows, self.dim);
        let mut dk = Matrix::zeros(rows, self.dim);
        let mut dv = Matrix::zeros(rows, self.dim);
        for h in 0..self.n_heads {
            let (lo, hi) = (h * hd, (h + 1) * hd);
            let a = &cache.probs[h];
            let qh = cache.q.slice_cols(lo, hi);
            let kh = cache.k.slice_cols(lo, hi);
            let vh = cache.v.slice_cols(lo, hi);
            let doh = dcontext.slice_cols(lo, hi);
            let da = doh.matmul_t(&vh);
            dv.set_cols(lo, &a.t_matmul(&doh));
            let mut ds = softmax_backward(a, &da);
            ds.scale(scale);
            dq.set_cols(lo, &ds.matmul(&kh));
            dk.set_cols(lo, &ds.t_matmul(&qh));
        }
        let mut dx = self.query.backward(p, &cache.x, &dq, g);
        dx.add_assign(&self.key.backward(p, &cache.x, &dk, g));
        dx.add_assign(&self.value.backward(p, &cache.x, &dv, g));
        dx
    }
}

/// `h = x + attn(ln1(x)); y = h + ffn(ln2(h))`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ffn: FeedForward,
}

#[derive(Debug, Clone)]
pub struct BlockCache<T> {
    ln1: LayerNormCache<T>,
    attn: AttentionCache<T>,
    ln2: LayerNormCache<T>,
    ffn: FeedForwardCache<T>,
}

impl TransformerBlock {
    pub fn new<T: Real>(
        store: &mut ParameterStore<T>,
        name: &str,
        dim: usize,
        n_heads: usize,
        ffn_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        TransformerBlock {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), dim, rng),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), dim, n_heads, rng),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), dim, rng),
            ffn: FeedForward::new(store, &format!("{name}.ffn"), dim, ffn_dim, rng),
        }
    }

    pub fn forward<T: Real>(
        &self,
        p: &ParameterStore<T>,
        x: &Matrix<T>,
        key_len: usize,
    ) -> (Matrix<T>, BlockCache<T>) {
        let (a, ln1) = self.ln1.forward(p, x);
        let (mut h, attn) = self.attn.forward(p, &a, key_len);
        h.add_assign(x);
        let (b, ln2) = self.ln2.forward(p, &h);
        let (mut y, ffn) = self.ffn.forward(p, &b);
        y.add_assign(&h);
        (y, BlockCache { ln1, attn, ln2, ffn })
    }

    pub fn backward<T: Real>(
        &self,
        p: &ParameterStore<T>,
        cache: &BlockCache<T>,
        dy: &Matrix<T>,
        g: &mut Gradients<T>,
    ) -> Matrix<T> {
        let db = self.ffn.backward(p, &cache.ffn, dy, g);
        let mut dh = self.ln2.backward(p, &cache.ln2, &db, g);
        dh.add_assign(dy);
        let da = self.attn.backward(p, &cache.attn, &dh, g);
        let mut dx = self.ln1.backward(p, &cache.ln1, &da, g);
        dx.add_assign(&dh);
        dx
    }
}

/// Sinusoidal position table with `rows` positions of width `dim`.
pub fn sinusoidal_positions<T: Real>(rows: usize, dim: usize) -> Matrix<T> {
    let mut pe = Matrix::zeros(rows, dim);
    for pos in 0..rows {
        for i in 0..dim {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / dim as f64);
            let v = if i % 2 == 0 { angle.sin() } else { angle.cos() };
            pe.set(pos, i, T::c(v));
        }
    }
    pe
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};

    use super::*;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix<f64> {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn masked_keys_get_zero_weight_and_do_not_leak_into_valid_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParameterStore::<f64>::new();
        let attn = MultiHeadAttention::new(&mut store, "a", 8, 4, &mut rng);
        let mut x = random(&mut rng, 5, 8);
        let (y1, cache) = attn.forward(&store, &x, 3);
        for h in 0..4 {
            for i in 0..5 {
                assert!(cache.weights(h).row(i)[3..].iter().all(|&w| w == 0.0));
            }
        }
        for j in 0..8 {
            x.set(3, j, 100.0);
            x.set(4, j, -7.0);
        }
        let (y2, _) = attn.forward(&store, &x, 3);
        assert_eq!(y1.slice_rows(0, 3), y2.slice_rows(0, 3));
    }

    #[test]
    fn position_table_starts_with_sin_cos_of_zero() {
        let pe = sinusoidal_positions::<f64>(3, 4);
        assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0]);
        assert!((pe.get(1, 0) - 1f64.sin()).abs() < 1e-15);
    }
}
