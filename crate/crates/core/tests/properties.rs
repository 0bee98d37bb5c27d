use proptest::prelude::*;
use proptest::sample::subsequence;

use awekit::corpus::{
    extract_segments, frame_index, load_corpus, normalize, sample_pair_indices, write_corpus, Corpus, FeatureSequence,
    NormalizationMode, NormalizationScope, WordAlignment,
};
use awekit::dtw::{dtw_cost, dtw_search};
use awekit::embed::{Architecture, Embedder, Meanpool, Model, ModelConfig, RnnConfig, Subsample, SubsampleConfig, TransformerConfig};
use awekit::kws::{generate_windows, score_keyword, search, Detection, KeywordTemplateSet, RankedDetections, WindowConfig};
use awekit::metrics::{evaluate, GroundTruth};
use awekit::nn::Matrix;
use awekit::train::nt_xent_loss;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix<f32>> {
    prop::collection::vec(-3.0f32..3.0, rows * cols).prop_map(move |v| Matrix::from_vec(rows, cols, v).unwrap())
}

fn seq_of_dim(dim: usize, max_len: usize) -> impl Strategy<Value = Matrix<f32>> {
    (1..=max_len).prop_flat_map(move |t| matrix(t, dim))
}

/// Frames bounded away from zero norm, as DTW requires.
fn dtw_seq(dim: usize, max_len: usize) -> impl Strategy<Value = Matrix<f32>> {
    seq_of_dim(dim, max_len).prop_map(|mut m| {
        for r in 0..m.rows() {
            m.row_mut(r)[0] += 4.0;
        }
        m
    })
}

fn corpus_strategy() -> impl Strategy<Value = Corpus> {
    (1usize..4).prop_flat_map(|dim| {
        prop::collection::vec((seq_of_dim(dim, 8), 0u8..2), 1..5).prop_map(|items| {
            let seqs = items
                .into_iter()
                .enumerate()
                .map(|(i, (m, spk))| FeatureSequence::new(format!("u{i}"), format!("s{spk}"), m))
                .collect();
            Corpus::new(seqs).unwrap()
        })
    })
}

fn max_abs_diff(a: &Corpus, b: &Corpus) -> f32 {
    a.sequences()
        .iter()
        .zip(b.sequences())
        .flat_map(|(x, y)| x.frames.as_slice().iter().zip(y.frames.as_slice()).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f32::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn write_load_roundtrip_is_bit_exact(c in corpus_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let back = load_corpus(&write_corpus(&c, &dir.path().join("c.jsonl")).unwrap()).unwrap();
        for (a, b) in c.sequences().iter().zip(back.sequences()) {
            let bits = |m: &Matrix<f32>| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&a.frames), bits(&b.frames));
            prop_assert_eq!(&a.utterance_id, &b.utterance_id);
        }
    }

    #[test]
    fn normalization_is_idempotent(c in corpus_strategy(), speaker in any::<bool>()) {
        let mode = if speaker { NormalizationMode::PerSpeaker } else { NormalizationMode::PerUtterance };
        let scope = NormalizationScope::new(mode);
        let once = normalize(&c, scope).unwrap();
        let twice = normalize(&once, scope).unwrap();
        prop_assert!(max_abs_diff(&once, &twice) <= 1e-5);
    }

    #[test]
    fn pair_sampling_is_reproducible_and_label_consistent(
        labels in prop::collection::vec(0u8..4, 2..16),
        half in 1usize..20,
        seed in any::<u64>(),
    ) {
        let n = labels.len();
        let rows: Vec<Vec<f32>> = (0..n).map(|i| vec![i as f32]).collect();
        let words = labels
            .iter()
            .enumerate()
            .map(|(i, l)| WordAlignment { label: format!("w{l}"), start: i, end: i + 1 })
            .collect();
        let c = Corpus::new(vec![FeatureSequence::new("u", "s", Matrix::from_rows(&rows).unwrap()).with_words(words)]).unwrap();
        let segs = extract_segments(&c).unwrap();
        match sample_pair_indices(&segs, 2 * half, seed) {
            Ok(pairs) => {
                prop_assert_eq!(pairs.len(), 2 * half);
                prop_assert_eq!(&pairs, &sample_pair_indices(&segs, 2 * half, seed).unwrap());
                for chunk in pairs.chunks(2) {
                    let ((a, b), (c2, d)) = (chunk[0], chunk[1]);
                    prop_assert_eq!((a, b), (d, c2));
                    prop_assert_eq!(&segs[a].label, &segs[b].label);
                    prop_assert_ne!(segs[a].start_frame, segs[b].start_frame);
                }
            }
            Err(_) => {
                let mut counts = [0; 4];
                for &l in &labels { counts[l as usize] += 1; }
                prop_assert!(counts.iter().all(|&c| c < 2));
            }
        }
    }

    #[test]
    fn frame_conversion_is_monotone(t1 in 0.0f64..100.0, dt in 0.0f64..5.0, period in 0.005f64..0.05) {
        prop_assert!(frame_index(t1, period) <= frame_index(t1 + dt, period));
    }

    #[test]
    fn meanpool_ignores_frame_order(m in seq_of_dim(3, 10), perm_seed in any::<u64>()) {
        use rand::{seq::SliceRandom, SeedableRng};
        let mut order: Vec<usize> = (0..m.rows()).collect();
        order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(perm_seed));
        let rows: Vec<Vec<f32>> = order.iter().map(|&r| m.row(r).to_vec()).collect();
        let a = Meanpool.embed_frames(&m).unwrap();
        let b = Meanpool.embed_frames(&Matrix::from_rows(&rows).unwrap()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-5 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn subsample_of_k_frames_is_the_flattened_sequence(k in 1usize..12, d in 1usize..5, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let m = Matrix::from_vec(k, d, (0..k * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let v = Subsample { config: SubsampleConfig { k } }.embed_frames(&m).unwrap();
        prop_assert_eq!(v.as_slice(), m.as_slice());
    }

    #[test]
    fn dtw_is_symmetric_bounded_and_zero_on_itself(a in dtw_seq(3, 7), b in dtw_seq(3, 7)) {
        let ab = dtw_cost(&a, &b).unwrap().cost;
        let ba = dtw_cost(&b, &a).unwrap().cost;
        prop_assert!((ab - ba).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(dtw_cost(&a, &a).unwrap().cost, 0.0);
    }

    #[test]
    fn dtw_search_beats_every_slice(t in dtw_seq(2, 5), u in dtw_seq(2, 9)) {
        let best = dtw_search(&t, &u).unwrap();
        let (s, e) = best.region;
        prop_assert!(s < e && e <= u.rows());
        for start in 0..u.rows() {
            for end in start + 1..=u.rows() {
                let c = dtw_cost(&t, &u.slice_rows(start, end)).unwrap().cost;
                prop_assert!(best.cost <= c + 1e-12, "slice [{}, {}) cost {} < {}", start, end, c, best.cost);
            }
        }
    }

    #[test]
    fn windows_fit_and_match_the_closed_form(
        t in 1usize..150,
        min_len in 1usize..20,
        extra in 0usize..40,
        len_step in 1usize..8,
        stride in 1usize..8,
    ) {
        let cfg = WindowConfig { min_len, max_len: min_len + extra, len_step, stride };
        let w = generate_windows(t, &cfg);
        if t < min_len {
            prop_assert_eq!(w, vec![(0, t)]);
        } else {
            let expected: usize = (min_len..=min_len + extra)
                .step_by(len_step)
                .filter(|&l| l <= t)
                .map(|l| (t - l) / stride + 1)
                .sum();
            prop_assert_eq!(w.len(), expected);
            prop_assert!(w.iter().all(|&(s, l)| l > 0 && s + l <= t));
        }
    }
}

fn labeled(id: &str, m: Matrix<f32>) -> FeatureSequence {
    FeatureSequence::new(id, "s", m)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn keyword_score_ignores_template_order_and_grows_with_templates(
        templates in prop::collection::vec(seq_of_dim(2, 12), 1..5),
        extra in seq_of_dim(2, 12),
        utt in seq_of_dim(2, 30),
        rot in 0usize..5,
    ) {
        let cfg = WindowConfig { min_len: 3, max_len: 9, len_step: 2, stride: 2 };
        let u = labeled("u", utt);
        let seqs: Vec<FeatureSequence> = templates.into_iter().enumerate().map(|(i, m)| labeled(&format!("t{i}"), m)).collect();
        let base = score_keyword(&KeywordTemplateSet::new("k", seqs.clone()).unwrap(), &u, &Meanpool, &cfg).unwrap();

        let mut rotated = seqs.clone();
        let n = rotated.len();
        rotated.rotate_left(rot % n);
        let r = score_keyword(&KeywordTemplateSet::new("k", rotated).unwrap(), &u, &Meanpool, &cfg).unwrap();
        prop_assert_eq!(r.score, base.score);

        let mut more = seqs;
        more.push(labeled("x", extra));
        let m = score_keyword(&KeywordTemplateSet::new("k", more).unwrap(), &u, &Meanpool, &cfg).unwrap();
        prop_assert!(m.score >= base.score);
    }
}

fn ranking_strategy() -> impl Strategy<Value = (Vec<(String, i32)>, Vec<String>)> {
    (1usize..30).prop_flat_map(|n| {
        let ids: Vec<String> = (0..n).map(|i| format!("u{i:02}")).collect();
        (
            prop::collection::vec(-20i32..20, n).prop_map(move |s| ids.iter().cloned().zip(s).collect::<Vec<_>>()),
            subsequence((0..n).map(|i| format!("u{i:02}")).collect::<Vec<_>>(), 1..=n),
        )
    })
}

fn ranked(keyword: &str, scored: &[(String, f64)]) -> RankedDetections {
    RankedDetections {
        keyword: keyword.into(),
        detections: scored
            .iter()
            .map(|(id, s)| Detection {
                keyword: keyword.into(),
                utterance_id: id.clone(),
                score: *s,
                best_window: (0, 1),
                best_template: 0,
            })
            .collect(),
    }
}

fn truth_of(keyword: &str, relevant: &[String]) -> GroundTruth {
    let mut t = GroundTruth::new();
    for r in relevant {
        t.insert(keyword, r.clone());
    }
    t
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn metrics_depend_only_on_rank((scores, relevant) in ranking_strategy()) {
        let truth = truth_of("k", &relevant);
        let raw: Vec<(String, f64)> = scores.iter().map(|(id, s)| (id.clone(), *s as f64)).collect();
        let cubed: Vec<(String, f64)> = raw.iter().map(|(id, s)| (id.clone(), s * s * s - 5.0)).collect();
        let squashed: Vec<(String, f64)> = raw.iter().map(|(id, s)| (id.clone(), 2.0 * s + 7.0)).collect();
        let a = evaluate(&[ranked("k", &raw)], &truth, 1).unwrap().to_json();
        prop_assert_eq!(&a, &evaluate(&[ranked("k", &cubed)], &truth, 1).unwrap().to_json());
        prop_assert_eq!(&a, &evaluate(&[ranked("k", &squashed)], &truth, 1).unwrap().to_json());
    }

    #[test]
    fn evaluate_ignores_input_order((scores, relevant) in ranking_strategy(), (s2, r2) in ranking_strategy(), seed in any::<u64>()) {
        use rand::{seq::SliceRandom, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut truth = truth_of("a", &relevant);
        for r in &r2 { truth.insert("b", r.clone()); }
        let fa: Vec<(String, f64)> = scores.iter().map(|(id, s)| (id.clone(), *s as f64)).collect();
        let fb: Vec<(String, f64)> = s2.iter().map(|(id, s)| (id.clone(), *s as f64)).collect();
        let base = evaluate(&[ranked("a", &fa), ranked("b", &fb)], &truth, 1).unwrap();
        let (mut sa, mut sb) = (fa.clone(), fb.clone());
        sa.shuffle(&mut rng);
        sb.shuffle(&mut rng);
        let shuffled = evaluate(&[ranked("b", &sb), ranked("a", &sa)], &truth, 1).unwrap();
        prop_assert_eq!(base.to_json(), shuffled.to_json());
        prop_assert_eq!(base.to_tsv(), shuffled.to_tsv());
    }

    #[test]
    fn ap_is_one_exactly_when_relevant_items_lead((scores, relevant) in ranking_strategy()) {
        let truth = truth_of("k", &relevant);
        let raw: Vec<(String, f64)> = scores.iter().map(|(id, s)| (id.clone(), *s as f64)).collect();
        let r = RankedDetections::new("k", ranked("k", &raw).detections);
        let report = evaluate(std::slice::from_ref(&r), &truth, 1).unwrap();
        let km = &report.keywords[0];
        let n = relevant.len();
        let lead = r.detections[..n].iter().all(|d| relevant.contains(&d.utterance_id));
        prop_assert_eq!(km.ap == Some(1.0), lead);
        let p_n = km.p_at_n.unwrap();
        prop_assert!(p_n <= 1.0);
        prop_assert_eq!(p_n == 1.0, lead);
    }
}

fn private_pair_batch(others: &[(Vec<f64>, Vec<f64>)], theta: f64) -> (Matrix<f64>, Matrix<f64>) {
    // pair 0 lives in dims 0..2, every other pair in dims 2.., so only the
    // anchor-positive similarity of pair 0 depends on theta
    let e = 2 + others[0].0.len();
    let mut a = Matrix::zeros(others.len() + 1, e);
    let mut p = Matrix::zeros(others.len() + 1, e);
    a.set(0, 0, 1.0);
    p.set(0, 0, theta.cos());
    p.set(0, 1, theta.sin());
    for (i, (x, y)) in others.iter().enumerate() {
        a.row_mut(i + 1)[2..].copy_from_slice(x);
        p.row_mut(i + 1)[2..].copy_from_slice(y);
    }
    (a, p)
}

fn nonzero_vec(e: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, e).prop_map(|mut v| {
        v[0] += 2.0;
        v
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nt_xent_ignores_pair_order(
        pairs in (1usize..8, 1usize..10).prop_flat_map(|(n, e)| prop::collection::vec((nonzero_vec(e), nonzero_vec(e)), n)),
        rot in 0usize..8,
        tau in 0.05f64..2.0,
    ) {
        let build = |ps: &[(Vec<f64>, Vec<f64>)]| {
            let a: Vec<Vec<f64>> = ps.iter().map(|p| p.0.clone()).collect();
            let p: Vec<Vec<f64>> = ps.iter().map(|p| p.1.clone()).collect();
            nt_xent_loss(&Matrix::from_rows(&a).unwrap(), &Matrix::from_rows(&p).unwrap(), tau).unwrap()
        };
        let mut rotated = pairs.clone();
        let n = rotated.len();
        rotated.rotate_left(rot % n);
        let (x, y) = (build(&pairs), build(&rotated));
        prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
    }

    #[test]
    fn nt_xent_falls_as_a_positive_pair_aligns(
        others in (1usize..6, 1usize..6).prop_flat_map(|(n, e)| prop::collection::vec((nonzero_vec(e), nonzero_vec(e)), n)),
        t1 in 0.1f64..3.0,
        gap in 0.05f64..1.0,
        tau in 0.1f64..2.0,
    ) {
        let loss = |theta: f64| {
            let (a, p) = private_pair_batch(&others, theta);
            nt_xent_loss(&a, &p, tau).unwrap()
        };
        // smaller angle means higher cosine
        let t0 = (t1 - gap).max(0.0);
        prop_assert!(loss(t0) < loss(t1));
    }
}

fn tiny_transformer() -> Model<f64> {
    Model::new(
        ModelConfig::ContrastiveTransformer(TransformerConfig {
            n_layers: 2,
            n_heads: 2,
            model_dim: 8,
            ffn_dim: 12,
            awe_dim: 6,
            input_dim: 3,
        }),
        17,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn transformer_ignores_padding(m in seq_of_dim(3, 10), pad in 1usize..8) {
        let model = tiny_transformer();
        let Architecture::Transformer(enc) = &model.arch else { unreachable!() };
        let x: Matrix<f64> = m.cast();
        let alone = model.encode(&x).unwrap();
        let mut padded = Matrix::filled(x.rows() + pad, 3, 9.5);
        padded.as_mut_slice()[..x.as_slice().len()].copy_from_slice(x.as_slice());
        let (batched, _) = enc.encode_padded(&model.params, &padded, x.rows()).unwrap();
        for (a, b) in alone.iter().zip(&batched) {
            prop_assert!((a - b).abs() <= 1e-10, "{} vs {}", a, b);
        }
    }

    #[test]
    fn embedders_are_deterministic(m in seq_of_dim(3, 10)) {
        let rnn = Model::<f32>::new(ModelConfig::ContrastiveRnn(RnnConfig { n_layers: 2, hidden_dim: 5, awe_dim: 4, input_dim: 3 }), 2).unwrap();
        let cae = Model::<f32>::new(ModelConfig::CaeRnn(RnnConfig { n_layers: 1, hidden_dim: 5, awe_dim: 4, input_dim: 3 }), 2).unwrap();
        let tr = tiny_transformer();
        let embedders: [&dyn Embedder; 5] = [&Meanpool, &Subsample { config: SubsampleConfig { k: 4 } }, &rnn, &cae, &tr];
        for e in embedders {
            let a: Vec<u32> = e.embed_frames(&m).unwrap().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = e.embed_frames(&m).unwrap().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}

/// Reversing the frames changes the output of the sequence models, found by
/// searching random inputs.
#[test]
fn sequence_models_depend_on_frame_order() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let rnn = Model::<f64>::new(ModelConfig::ContrastiveRnn(RnnConfig { n_layers: 1, hidden_dim: 5, awe_dim: 4, input_dim: 3 }), 2).unwrap();
    let tr = tiny_transformer();
    for model in [&rnn as &dyn Embedder, &tr] {
        let found = (0..20).any(|_| {
            let t = rng.gen_range(2..8);
            let rows: Vec<Vec<f32>> = (0..t).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let mut rev = rows.clone();
            rev.reverse();
            let a = model.embed_frames(&Matrix::from_rows(&rows).unwrap()).unwrap();
            let b = model.embed_frames(&Matrix::from_rows(&rev).unwrap()).unwrap();
            a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-4)
        });
        assert!(found, "{} looked order-invariant", model.id());
    }
}

#[test]
fn search_output_is_reproducible() {
    let data = awekit::synth::generate(&awekit::synth::SynthConfig { n_types: 3, n_search: 10, ..Default::default() }).unwrap();
    let sets = KeywordTemplateSet::from_corpus(&data.templates);
    let run = || {
        let r = search(&sets, &data.search, &Meanpool, &WindowConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        awekit::kws::write_detections(&p, &r).unwrap();
        std::fs::read(p).unwrap()
    };
    assert_eq!(run(), run());
}
