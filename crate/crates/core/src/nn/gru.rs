//! Gated recurrent units, unrolled over whole sequences.
//!
//! Gate layout inside the fused weight matrices is `[reset | update | candidate]`:
//!
//! ```text
//! r  = σ(x W_ir + b_ir + h W_hr + b_hr)
//! z  = σ(x W_iz + b_iz + h W_hz + b_hz)
//! n  = tanh(x W_in + b_in + r ⊙ (h W_hn + b_hn))
//! h' = (1 − z) ⊙ n + z ⊙ h
//! ```

use rand_chacha::ChaCha8Rng;

use super::params::{Gradients, Init, ParamId, ParameterStore};
use super::tensor::{gemm, Matrix, Real};

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GruLayer {
    pub w_input: ParamId,
    pub b_input: ParamId,
    pub w_hidden: ParamId,
    pub b_hidden: ParamId,
    pub in_dim: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone)]
pub struct GruLayerCache<T> {
    x: Matrix<T>,
    /// Hidden state before each step; row `t` is `h_{t-1}`.
    h_prev: Matrix<T>,
    r: Matrix<T>,
    z: Matrix<T>,
    n: Matrix<T>,
    /// `h W_hn + b_hn` per step.
    hn: Matrix<T>,
}

impl GruLayer {
    pub fn new<T: Real>(
        store: &mut ParameterStore<T>,
        name: &str,
        in_dim: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        GruLayer {
            w_input: store.add(format!("{name}.w_input"), in_dim, 3 * hidden, Init::Glorot, rng),
            b_input: store.add(format!("{name}.b_input"), 1, 3 * hidden, Init::Zeros, rng),
            w_hidden: store.add(format!("{name}.w_hidden"), hidden, 3 * hidden, Init::Glorot, rng),
            b_hidden: store.add(format!("{name}.b_hidden"), 1, 3 * hidden, Init::Zeros, rng),
            in_dim,
            hidden,
        }
    }

    /// Runs from a zero initial state; returns every hidden state (`T × hidden`).
    pub fn forward<T: Real>(
        &self,
        p: &ParameterStore<T>,
        x: &Matrix<T>,
    ) -> (Matrix<T>, GruLayerCache<T>) {
        let steps = x.rows();
        let hd = self.hidden;
        let mut gi = x.matmul(p.get(self.w_input));
        gi.add_row_broadcast(p.get(self.b_input).as_slice());
        let w_h = p.get(self.w_hidden);
        let b_h = p.get(self.b_hidden).as_slice();

        let mut out = Matrix::zeros(steps, hd);
        let mut cache = GruLayerCache {
            x: x.clone(),
            h_prev: Matrix::zeros(steps, hd),
            r: Matrix::zeros(steps, hd),
            z: Matrix::zeros(steps, hd),
            n: Matrix::zeros(steps, hd),
            hn: Matrix::zeros(steps, hd),
        };
        let mut h = Matrix::zeros(1, hd);
        let mut gh = Matrix::zeros(1, 3 * hd);
        for t in 0..steps {
            cache.h_prev.row_mut(t).copy_from_slice(h.as_slice());
            gemm(false, &h, false, w_h, T::zero(), &mut gh);
            let gi_t = gi.row(t);
            let gh_t = gh.as_slice();
            for j in 0..hd {
                let r = sigmoid(gi_t[j] + gh_t[j] + b_h[j]);
                let z = sigmoid(gi_t[hd + j] + gh_t[hd + j] + b_h[hd + j]);
                let hn = gh_t[2 * hd + j] + b_h[2 * hd + j];
                let n = (gi_t[2 * hd + j] + r * hn).tanh();
                let hp = h.as_slice()[j];
                cache.r.set(t, j, r);
                cache.z.set(t, j, z);
                cache.n.set(t, j, n);
                cache.hn.set(t, j, hn);
                out.set(t, j, (T::one() - z) * n + z * hp);
            }
            h.as_mut_slice().copy_from_slice(out.row(t));
        }
        (out, cache)
    }

    /// `dout` is the gradient w.r.t. every hidden state returned by `forward`.
    pub fn backward<T: Real>(
        &self,
        p: &ParameterStore<T>,
        cache: &GruLayerCache<T>,
        dout: &Matrix<T>,
        g: &mut Gradients<T>,
    ) -> Matrix<T> {
        let steps = dout.rows();
        let hd = self.hidden;
        let w_h = p.get(self.w_hidden);
        let mut dgi = Matrix::zeros(steps, 3 * hd);
        let mut dgh_all = Matrix::zeros(steps, 3 * hd);
        let mut dh_next = vec![T::zero(); hd];
        let mut dgh = Matrix::zeros(1, 3 * hd);
        let mut dh_prev = Matrix::zeros(1, hd);
        for t in (0..steps).rev() {
            let (r, z, n, hn, hp) = (
                cache.r.row(t),
                cache.z.row(t),
                cache.n.row(t),
                cache.hn.row(t),
                cache.h_prev.row(t),
            );
            let dgi_t = dgi.row_mut(t);
            let dgh_t = dgh.as_mut_slice();
            for j in 0..hd {
                let dh = dout.get(t, j) + dh_next[j];
                let dn = dh * (T::one() - z[j]);
                let dz = dh * (hp[j] - n[j]);
                let dn_pre = dn * (T::one() - n[j] * n[j]);
                let dr = dn_pre * hn[j];
                let dr_pre = dr * r[j] * (T::one() - r[j]);
                let dz_pre = dz * z[j] * (T::one() - z[j]);
                dgi_t[j] = dr_pre;
                dgi_t[hd + j] = dz_pre;
                dgi_t[2 * hd + j] = dn_pre;
                dgh_t[j] = dr_pre;
                dgh_t[hd + j] = dz_pre;
                dgh_t[2 * hd + j] = dn_pre * r[j];
                dh_next[j] = dh * z[j];
            }
            dgh_all.row_mut(t).copy_from_slice(dgh.as_slice());
            gemm(false, &dgh, true, w_h, T::zero(), &mut dh_prev);
            for (a, &b) in dh_next.iter_mut().zip(dh_prev.as_slice()) {
                *a += b;
            }
        }
        gemm(true, &cache.h_prev, false, &dgh_all, T::one(), g.get_mut(self.w_hidden));
        g.accumulate_row(self.b_hidden, &dgh_all.column_sums());
        gemm(true, &cache.x, false, &dgi, T::one(), g.get_mut(self.w_input));
        g.accumulate_row(self.b_input, &dgi.column_sums());
        dgi.matmul_t(p.get(self.w_input))
    }
}

/// Stacked unidirectional GRU layers; each layer reads the previous layer's states.
#[derive(Debug, Clone, PartialEq)]
pub struct GruStack {
    pub layers: Vec<GruLayer>,
}

impl GruStack {
    pub fn new<T: Real>(
        store: &mut ParameterStore<T>,
        name: &str,
        in_dim: usize,
        hidden: usize,
        n_layers: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let layers = (0..n_layers)
            .map(|l| {
                let d = if l == 0 { in_dim } else { hidden };
                GruLayer::new(store, &format!("{name}.layer{l}"), d, hidden, rng)
            })
            .collect();
        GruStack { layers }
    }

    pub fn hidden(&self) -> usize {
        self.layers.last().map_or(0, |l| l.hidden)
    }

    pub fn forward<T: Real>(
        &self,
        p: &ParameterStore<T>,
        x: &Matrix<T>,
    ) -> (Matrix<T>, Vec<GruLayerCache<T>>) {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let (out, cache) = layer.forward(p, &h);
            caches.push(cache);
            h = out;
        }
        (h, caches)
    }

    pub fn backward<T: Real>(
        &self,
        p: &ParameterStore<T>,
        caches: &[GruLayerCache<T>],
        dout: &Matrix<T>,
        g: &mut Gradients<T>,
    ) -> Matrix<T> {
        let mut d = dout.clone();
        for (layer, cache) in self.layers.iter().zip(caches).rev() {
            d = layer.backward(p, cache, &d, g);
        }
        d
    }
}
