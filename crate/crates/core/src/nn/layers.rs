//! Row-wise layers with hand-written reverse passes.
//!
//! Every layer follows the same pattern: `forward` returns the output together
//! with whatever the reverse pass needs, and `backward` accumulates parameter
//! gradients into a [`Gradients`] buffer and returns the input gradient.

use rand_chacha::ChaCha8Rng;

use super::params::{Gradients, Init, ParamId, ParameterStore};
use super::tensor::{gemm, Matrix, Real};

/// `y = x W + b` with `W` stored as `in_dim × out_dim`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Real>(
        store: &mut ParameterStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut layer = Self::without_bias(store, name, in_dim, out_dim, rng);
        layer.b = Some(store.add(format!("{name}.bias"), 1, out_dim, Init::Zeros, rng));
        layer
    }

    pub fn without_bias<T: Real>(
        store: &mut ParameterStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let w = store.add(format!("{name}.weight"), in_dim, out_dim, Init::Glorot, rng);
        Linear {
            w,
            b: None,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<T: Real>(&self, p: &ParameterStore<T>, x: &Matrix<T>) -> Matrix<T> {
        debug_assert_eq!(x.cols(), self.in_dim);
        let mut y = x.matmul(p.get(self.w));
        if let Some(b) = self.b {
            y.add_row_broadcast(p.get(b).as_slice());
        }
        y
    }

    pub fn backward<T: Real>(
        &self,
        p: &ParameterStore<T>,
        x: &Matrix<T>,
        dy: &Matrix<T>,
        g: &mut Gradients<T>,
    ) -> Matrix<T> {
        gemm(true, x, false, dy, T::one(), g.get_mut(self.w));
        if let Some(b) = self.b {
            g.accumulate_row(b, &dy.column_sums());
        }
        dy.matmul_t(p.get(self.w))
    }
}

/// Per-row normalization followed by a learned scale and shift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub dim: usize,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    xhat: Matrix<T>,
    inv_std: Vec<T>,
}

impl<T> LayerNormCache<T> {
    /// The normalized input before scale and shift.
    pub fn normalized(&self) -> &Matrix<T> {
        &self.xhat
    }
}

impl LayerNorm {
    pub fn new<T: Real>(
        store: &mut ParameterStore<T>,
        name: &str,
        dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let gamma = store.add(format!("{name}.gamma"), 1, dim, Init::Ones, rng);
        let beta = store.add(format!("{name}.beta"), 1, dim, Init::Zeros, rng);
        LayerNorm { gamma, beta, dim }
    }

    pub fn forward<T: Real>(
        &self,
        p: &ParameterStore<T>,
        x: &Matrix<T>,
    ) -> (Matrix<T>, LayerNormCache<T>) {
        let n = T::c(self.dim as f64);
        let eps = T::c(T::NORM_EPS);
        let gamma = p.get(self.gamma).as_slice();
        let beta = p.get(self.beta).as_slice();
        let mut xhat = Matrix::zeros(x.rows(), x.cols());
        let mut y = Matrix::zeros(x.rows(), x.cols());
        let mut inv_std = Vec::with_capacity(x.rows());
        for i in 0..x.rows() {
            let row = x.row(i);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            let xr = xhat.row_mut(i);
            for (o, &v) in xr.iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
            let xr = xhat.row(i).to_vec();
            for (j, o) in y.row_mut(i).iter_mut().enumerate() {
                *o = gamma[j] * xr[j] + beta[j];
            }
        }
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward<T: Real>(
        &self,
        p: &ParameterStore<T>,
        cache: &LayerNormCache<T>,
        dy: &Matrix<T>,
        g: &mut Gradients<T>,
    ) -> Matrix<T> {
        let n = T::c(self.dim as f64);
        let gamma = p.get(self.gamma).as_slice();
        let mut dgamma = vec![T::zero(); self.dim];
        let mut dx = Matrix::zeros(dy.rows(), dy.cols());
        let mut dxhat = vec![T::zero(); self.dim];
        for i in 0..dy.rows() {
            let dyr = dy.row(i);
            let xh = cache.xhat.row(i);
            for j in 0..self.dim {
                dgamma[j] += dyr[j] * xh[j];
                dxhat[j] = dyr[j] * gamma[j];
            }
            let sum_d = dxhat.iter().copied().sum::<T>();
            let sum_dx = dxhat.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>();
            let scale = cache.inv_std[i] / n;
            for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
                *o = scale * (n * dxhat[j] - sum_d - xh[j] * sum_dx);
            }
        }
        g.accumulate_row(self.gamma, &dgamma);
        g.accumulate_row(self.beta, &dy.column_sums());
        dx
    }
}

/// Row-wise softmax over the first `valid` columns; the rest are set to exactly 0.
pub fn softmax_rows_masked<T: Real>(scores: &mut Matrix<T>, valid: usize) {
    for i in 0..scores.rows() {
        let row = scores.row_mut(i);
        let (live, masked) = row.split_at_mut(valid.min(row.len()));
        let max = live.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in live.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in live.iter_mut() {
            *v /= sum;
        }
        for v in masked {
            *v = T::zero();
        }
    }
}

/// Reverse pass of a row-wise softmax given its output `y`.
pub fn softmax_backward<T: Real>(y: &Matrix<T>, dy: &Matrix<T>) -> Matrix<T> {
    let mut dx = Matrix::zeros(y.rows(), y.cols());
    for i in 0..y.rows() {
        let yr = y.row(i);
        let dyr = dy.row(i);
        let s = yr.iter().zip(dyr).map(|(&a, &b)| a * b).sum::<T>();
        for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
            *o = yr[j] * (dyr[j] - s);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub fn gelu<T: Real>(x: T) -> T {
    let u = T::c(GELU_C) * (x + T::c(GELU_A) * x * x * x);
    T::c(0.5) * x * (T::one() + u.tanh())
}

pub fn gelu_grad<T: Real>(x: T) -> T {
    let u = T::c(GELU_C) * (x + T::c(GELU_A) * x * x * x);
    let t = u.tanh();
    let du = T::c(GELU_C) * (T::one() + T::c(3.0 * GELU_A) * x * x);
    T::c(0.5) * (T::one() + t) + T::c(0.5) * x * (T::one() - t * t) * du
}

/// Two linear maps with a GELU in between.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

#[derive(Debug, Clone)]
pub struct FeedForwardCache<T> {
    x: Matrix<T>,
    pre: Matrix<T>,
    act: Matrix<T>,
}

impl FeedForward {
    pub fn new<T: Real>(
        store: &mut ParameterStore<T>,
        name: &str,
        dim: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        FeedForward {
            up: Linear::new(store, &format!("{name}.up"), dim, hidden, rng),
            down: Linear::new(store, &format!("{name}.down"), hidden, dim, rng),
        }
    }

    pub fn forward<T: Real>(
        &self,
        p: &ParameterStore<T>,
        x: &Matrix<T>,
    ) -> (Matrix<T>, FeedForwardCache<T>) {
        let pre = self.up.forward(p, x);
        let act = pre.map(gelu);
        let y = self.down.forward(p, &act);
        (
            y,
            FeedForwardCache {
                x: x.clone(),
                pre,
                act,
            },
        )
    }

    pub fn backward<T: Real>(
        &self,
        p: &ParameterStore<T>,
        cache: &FeedForwardCache<T>,
        dy: &Matrix<T>,
        g: &mut Gradients<T>,
    ) -> Matrix<T> {
        let mut dact = self.down.backward(p, &cache.act, dy, g);
        for (d, &x) in dact.as_mut_slice().iter_mut().zip(cache.pre.as_slice()) {
            *d *= gelu_grad(x);
        }
        self.up.backward(p, &cache.x, &dact, g)
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};

    use super::*;

    #[test]
    fn identity_linear_with_half_squared_norm_loss_returns_input_as_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParameterStore::<f64>::new();
        let lin = Linear::new(&mut store, "l", 3, 3, &mut rng);
        let eye = Matrix::from_vec(3, 3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        store.get_mut(lin.w).clone_from(&eye);
        let x = Matrix::from_vec(1, 3, vec![0.5, -2.0, 3.0]).unwrap();
        let y = lin.forward(&store, &x);
        assert_eq!(y, x);
        // d(½‖y‖²)/dy = y
        let mut g = Gradients::zeros_like(&store);
        let dx = lin.backward(&store, &x, &y, &mut g);
        assert_eq!(dx, x);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_masked_entries_are_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for valid in 1..=6 {
            let data = (0..4 * 6).map(|_| rng.gen_range(-20.0..20.0)).collect();
            let mut m = Matrix::<f64>::from_vec(4, 6, data).unwrap();
            softmax_rows_masked(&mut m, valid);
            for i in 0..4 {
                let s: f64 = m.row(i).iter().sum();
                assert!((s - 1.0).abs() <= 1e-12);
                assert!(m.row(i)[valid..].iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn layer_norm_output_is_standardized_before_affine() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParameterStore::<f64>::new();
        let ln = LayerNorm::new(&mut store, "ln", 7, &mut rng);
        for _ in 0..20 {
            let data = (0..5 * 7).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let x = Matrix::from_vec(5, 7, data).unwrap();
            let (_, cache) = ln.forward(&store, &x);
            for i in 0..5 {
                let r = cache.normalized().row(i);
                let mean = r.iter().sum::<f64>() / 7.0;
                let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 7.0;
                assert!(mean.abs() <= 1e-10, "mean {mean}");
                assert!((var - 1.0).abs() <= 1e-8, "var {var}");
            }
        }
    }

    #[test]
    fn gelu_derivative_matches_central_difference() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.2, 1.5, 4.0] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }
}
