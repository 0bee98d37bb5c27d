//! Finite-difference checks for every layer, loss and trainable embedder.
//!
//! Each check builds a small random instance in f64, reduces the output to a
//! scalar with random weights (or uses the loss itself) and compares the
//! analytic gradients of parameters and inputs with central differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embed::{backward_batch, encode_batch, CaeRnn, Encoder, RnnConfig, RnnEncoder, TransformerConfig, TransformerEncoder};
use crate::nn::attention::{MultiHeadAttention, TransformerBlock};
use crate::nn::gradcheck::{check_inputs, check_params, GradCheckReport};
use crate::nn::gru::{GruLayer, GruStack};
use crate::nn::layers::{FeedForward, LayerNorm, Linear};
use crate::nn::{Gradients, Matrix, PaddedBatch, ParameterStore};
use crate::train::{cae_pair_gradients, nt_xent, reconstruction};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
pub const DEFAULT_TRIALS: usize = 20;

#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub name: &'static str,
    pub trials: usize,
    pub report: GradCheckReport,
}

impl SuiteEntry {
    pub fn passes(&self) -> bool {
        self.report.passes(TOLERANCE)
    }
}

fn rand_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<f64> {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .expect("shape")
}

/// Moves every parameter off its initial value so biases and scales are generic.
fn jitter(store: &mut ParameterStore<f64>, rng: &mut ChaCha8Rng, amount: f64) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.get_mut(id).as_mut_slice() {
            *v += rng.gen_range(-amount..amount);
        }
    }
}

fn weighted(y: &Matrix<f64>, r: &Matrix<f64>) -> f64 {
    y.as_slice().iter().zip(r.as_slice()).map(|(a, b)| a * b).sum()
}

/// Checks a map `(params, x) → y` under the loss `Σ r ⊙ y`.
fn check_map(
    p: &ParameterStore<f64>,
    x: &Matrix<f64>,
    r: &Matrix<f64>,
    forward: impl Fn(&ParameterStore<f64>, &Matrix<f64>) -> Matrix<f64>,
    backward: impl Fn(&ParameterStore<f64>, &Matrix<f64>, &mut Gradients<f64>) -> Matrix<f64>,
) -> GradCheckReport {
    let mut g = Gradients::zeros_like(p);
    let dx = backward(p, x, &mut g);
    let mut report = check_params(p, &g, STEP, |q| weighted(&forward(q, x), r));
    report.merge(check_inputs(x.as_slice(), dx.as_slice(), STEP, |flat| {
        let xi = Matrix::from_vec(x.rows(), x.cols(), flat.to_vec()).expect("shape");
        weighted(&forward(p, &xi), r)
    }));
    report
}

fn trials(name: &'static str, n: usize, seed: u64, mut one: impl FnMut(&mut ChaCha8Rng) -> GradCheckReport) -> SuiteEntry {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport::default();
    for _ in 0..n {
        report.merge(one(&mut rng));
    }
    SuiteEntry {
        name,
        trials: n,
        report,
    }
}

fn linear(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let mut p = ParameterStore::new();
    let (i, o, t) = (rng.gen_range(1..5), rng.gen_range(1..5), rng.gen_range(1..6));
    let layer = Linear::new(&mut p, "linear", i, o, rng);
    jitter(&mut p, rng, 0.5);
    let x = rand_matrix(rng, t, i);
    let r = rand_matrix(rng, t, o);
    check_map(&p, &x, &r, |q, x| layer.forward(q, x), |q, x, g| layer.backward(q, x, &r, g))
}

fn layer_norm(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let mut p = ParameterStore::new();
    // over two features the normalized output is exactly ±1; nothing to check
    let (d, t) = (rng.gen_range(3..7), rng.gen_range(1..5));
    let layer = LayerNorm::new(&mut p, "ln", d, rng);
    jitter(&mut p, rng, 0.5);
    let x = rand_matrix(rng, t, d);
    let r = rand_matrix(rng, t, d);
    check_map(
        &p,
        &x,
        &r,
        |q, x| layer.forward(q, x).0,
        |q, x, g| {
            let (_, cache) = layer.forward(q, x);
            layer.backward(q, &cache, &r, g)
        },
    )
}

fn feed_forward(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let mut p = ParameterStore::new();
    let (d, h, t) = (rng.gen_range(1..5), rng.gen_range(1..7), rng.gen_range(1..5));
    let layer = FeedForward::new(&mut p, "ffn", d, h, rng);
    jitter(&mut p, rng, 0.5);
    let x = rand_matrix(rng, t, d);
    let r = rand_matrix(rng, t, d);
    check_map(
        &p,
        &x,
        &r,
        |q, x| layer.forward(q, x).0,
        |q, x, g| {
            let (_, cache) = layer.forward(q, x);
            layer.backward(q, &cache, &r, g)
        },
    )
}

fn attention(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let mut p = ParameterStore::new();
    let heads = rng.gen_range(1..4);
    let d = heads * rng.gen_range(1..3);
    let t = rng.gen_range(1..6);
    let key_len = rng.gen_range(1..=t);
    let layer = MultiHeadAttention::new(&mut p, "attn", d, heads, rng);
    jitter(&mut p, rng, 0.3);
    let x = rand_matrix(rng, t, d);
    let r = rand_matrix(rng, t, d);
    check_map(
        &p,
        &x,
        &r,
        |q, x| layer.forward(q, x, key_len).0,
        |q, x, g| {
            let (_, cache) = layer.forward(q, x, key_len);
            layer.backward(q, &cache, &r, g)
        },
    )
}

fn transformer_block(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let mut p = ParameterStore::new();
    let heads = rng.gen_range(2..4);
    let d = heads * 2;
    let t = rng.gen_range(1..5);
    let key_len = rng.gen_range(1..=t);
    let layer = TransformerBlock::new(&mut p, "block", d, heads, rng.gen_range(1..6), rng);
    jitter(&mut p, rng, 0.3);
    let x = rand_matrix(rng, t, d);
    let r = rand_matrix(rng, t, d);
    check_map(
        &p,
        &x,
        &r,
        |q, x| layer.forward(q, x, key_len).0,
        |q, x, g| {
            let (_, cache) = layer.forward(q, x, key_len);
            layer.backward(q, &cache, &r, g)
        },
    )
}

fn gru_layer(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let mut p = ParameterStore::new();
    let (i, h, t) = (rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(1..6));
    let layer = GruLayer::new(&mut p, "gru", i, h, rng);
    jitter(&mut p, rng, 0.5);
    let x = rand_matrix(rng, t, i);
    let r = rand_matrix(rng, t, h);
    check_map(
        &p,
        &x,
        &r,
        |q, x| layer.forward(q, x).0,
        |q, x, g| {
            let (_, cache) = layer.forward(q, x);
            layer.backward(q, &cache, &r, g)
        },
    )
}

fn gru_stack(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let mut p = ParameterStore::new();
    let (i, h, t) = (rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(1..5));
    let stack = GruStack::new(&mut p, "gru", i, h, rng.gen_range(1..4), rng);
    jitter(&mut p, rng, 0.5);
    let x = rand_matrix(rng, t, i);
    let r = rand_matrix(rng, t, h);
    check_map(
        &p,
        &x,
        &r,
        |q, x| stack.forward(q, x).0,
        |q, x, g| {
            let (_, caches) = stack.forward(q, x);
            stack.backward(q, &caches, &r, g)
        },
    )
}

fn nt_xent_inputs(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let n = rng.gen_range(1..6);
    let e = rng.gen_range(2..5);
    let tau = rng.gen_range(0.2..1.0);
    let a = rand_matrix(rng, n, e);
    let b = rand_matrix(rng, n, e);
    let out = nt_xent(&a, &b, tau).expect("non-zero rows");
    let mut both = a.as_slice().to_vec();
    both.extend_from_slice(b.as_slice());
    let mut analytic = out.d_anchors.as_slice().to_vec();
    analytic.extend_from_slice(out.d_positives.as_slice());
    check_inputs(&both, &analytic, STEP, |flat| {
        let a = Matrix::from_vec(n, e, flat[..n * e].to_vec()).expect("shape");
        let b = Matrix::from_vec(n, e, flat[n * e..].to_vec()).expect("shape");
        nt_xent(&a, &b, tau).expect("non-zero rows").loss
    })
}

fn reconstruction_inputs(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let (t, d) = (rng.gen_range(1..6), rng.gen_range(1..5));
    let decoded = rand_matrix(rng, t, d);
    let target = rand_matrix(rng, t, d);
    let (_, grad) = reconstruction(&decoded, &target).expect("shapes");
    check_inputs(decoded.as_slice(), grad.as_slice(), STEP, |flat| {
        let m = Matrix::from_vec(t, d, flat.to_vec()).expect("shape");
        reconstruction(&m, &target).expect("shapes").0
    })
}

/// Single-sequence check of an encoder under `Σ r ⊙ awe`, then a batch check
/// through NT-Xent over `2N` sequences of unequal length.
fn encoder_checks<A: Encoder>(arch: &A, p: &ParameterStore<f64>, rng: &mut ChaCha8Rng) -> GradCheckReport
where
    A::Cache<f64>: Sync,
{
    let d = arch.input_dim();
    let t = rng.gen_range(1..6);
    let x = rand_matrix(rng, t, d);
    let r = rand_matrix(rng, 1, arch.awe_dim());
    let awe = |q: &ParameterStore<f64>, x: &Matrix<f64>| {
        Matrix::from_vec(1, arch.awe_dim(), arch.encode(q, x).expect("encodes").0).expect("shape")
    };
    let mut report = check_map(p, &x, &r, awe, |q, x, g| {
        let (_, cache) = arch.encode(q, x).expect("encodes");
        arch.encode_backward(q, &cache, r.as_slice(), g)
    });

    let n = rng.gen_range(2..4);
    let seqs: Vec<Matrix<f64>> = (0..2 * n)
        .map(|_| {
            let len = rng.gen_range(1..6);
            rand_matrix(rng, len, d)
        })
        .collect();
    let refs: Vec<&Matrix<f64>> = seqs.iter().collect();
    let batch = PaddedBatch::from_sequences(&refs).expect("batch");
    let tau = rng.gen_range(0.3..1.0);
    let loss = |q: &ParameterStore<f64>| {
        let (e, _) = encode_batch(arch, q, &batch).expect("encodes");
        nt_xent(&e.slice_rows(0, n), &e.slice_rows(n, 2 * n), tau).expect("loss").loss
    };
    let (e, caches) = encode_batch(arch, p, &batch).expect("encodes");
    let out = nt_xent(&e.slice_rows(0, n), &e.slice_rows(n, 2 * n), tau).expect("loss");
    let mut d_e = Matrix::zeros(2 * n, e.cols());
    d_e.as_mut_slice()[..n * e.cols()].copy_from_slice(out.d_anchors.as_slice());
    d_e.as_mut_slice()[n * e.cols()..].copy_from_slice(out.d_positives.as_slice());
    let g = backward_batch(arch, p, &caches, &d_e).expect("finite");
    report.merge(check_params(p, &g, STEP, loss));
    report
}

fn contrastive_transformer(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let heads = rng.gen_range(2..4);
    let cfg = TransformerConfig {
        n_layers: rng.gen_range(1..3),
        n_heads: heads,
        model_dim: 2 * heads,
        ffn_dim: rng.gen_range(2..5),
        awe_dim: rng.gen_range(2..4),
        input_dim: rng.gen_range(1..4),
    };
    let mut p = ParameterStore::new();
    let arch = TransformerEncoder::new(cfg, &mut p, rng).expect("valid config");
    jitter(&mut p, rng, 0.3);
    let mut report = encoder_checks(&arch, &p, rng);

    // padding rows must not influence the result or receive gradient
    let valid = rng.gen_range(1..4);
    let rows = valid + rng.gen_range(1..3);
    let x = rand_matrix(rng, rows, cfg.input_dim);
    let r = rand_matrix(rng, 1, cfg.awe_dim);
    let (_, cache) = arch.encode_padded(&p, &x, valid).expect("encodes");
    let mut g = Gradients::zeros_like(&p);
    arch.encode_backward(&p, &cache, r.as_slice(), &mut g);
    report.merge(check_params(&p, &g, STEP, |q| {
        let awe = arch.encode_padded(q, &x, valid).expect("encodes").0;
        awe.iter().zip(r.as_slice()).map(|(a, b)| a * b).sum()
    }));
    report
}

fn small_rnn(rng: &mut ChaCha8Rng) -> RnnConfig {
    RnnConfig {
        n_layers: rng.gen_range(1..3),
        hidden_dim: rng.gen_range(1..4),
        awe_dim: rng.gen_range(2..4),
        input_dim: rng.gen_range(1..4),
    }
}

fn contrastive_rnn(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let cfg = small_rnn(rng);
    let mut p = ParameterStore::new();
    let arch = RnnEncoder::new(cfg, &mut p, rng).expect("valid config");
    jitter(&mut p, rng, 0.5);
    encoder_checks(&arch, &p, rng)
}

fn cae_rnn(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let cfg = small_rnn(rng);
    let mut p = ParameterStore::new();
    let arch = CaeRnn::new(cfg, &mut p, rng).expect("valid config");
    jitter(&mut p, rng, 0.5);
    let (ti, tt) = (rng.gen_range(1..5), rng.gen_range(1..5));
    let input = rand_matrix(rng, ti, cfg.input_dim);
    let target = rand_matrix(rng, tt, cfg.input_dim);
    let (_, g) = cae_pair_gradients(&arch, &p, &input, &target).expect("finite");
    check_params(&p, &g, STEP, |q| cae_pair_gradients(&arch, q, &input, &target).expect("finite").0)
}

pub type Check = fn(&mut ChaCha8Rng) -> GradCheckReport;

/// Every check in the suite, by name.
pub const CHECKS: &[(&str, Check)] = &[
    ("linear", linear),
    ("layer-norm", layer_norm),
    ("feed-forward", feed_forward),
    ("multi-head-attention", attention),
    ("transformer-block", transformer_block),
    ("gru-layer", gru_layer),
    ("gru-stack", gru_stack),
    ("nt-xent", nt_xent_inputs),
    ("reconstruction", reconstruction_inputs),
    ("contrastive-transformer", contrastive_transformer),
    ("contrastive-rnn", contrastive_rnn),
    ("cae-rnn", cae_rnn),
];

/// Runs every check `n_trials` times; check `i` draws from seed `seed + i`.
pub fn run(n_trials: usize, seed: u64) -> Vec<SuiteEntry> {
    CHECKS
        .iter()
        .enumerate()
        .map(|(i, &(name, check))| trials(name, n_trials, seed.wrapping_add(i as u64), check))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_check_passes() {
        let entries = run(DEFAULT_TRIALS, 11);
        for e in &entries {
            eprintln!("{:<24} {:>6} {:.3e} {:?}", e.name, e.report.checked, e.report.max_rel_err, e.report.worst);
        }
        for entry in entries {
            assert!(entry.report.checked > 0, "{}", entry.name);
            assert!(entry.passes(), "{}: {:?}", entry.name, entry.report);
        }
    }
}
