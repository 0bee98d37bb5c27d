use awekit::corpus::{extract_segments, normalize, sample_pair_indices, NormalizationMode, NormalizationScope};
use awekit::embed::{load_embedder, Embedder, Model, ModelConfig, RnnConfig, TransformerConfig};
use awekit::synth::{generate, SynthConfig};
use awekit::train::{train, TrainConfig};
use awekit::Error;

fn two_class_segments() -> Vec<awekit::corpus::WordSegment> {
    let data = generate(&SynthConfig { n_types: 2, n_search: 1, ..SynthConfig::default() }).unwrap();
    let train = normalize(&data.train, NormalizationScope::new(NormalizationMode::PerSpeaker)).unwrap();
    extract_segments(&train).unwrap()
}

fn small_transformer(dim: usize) -> ModelConfig {
    ModelConfig::ContrastiveTransformer(TransformerConfig {
        n_layers: 1,
        n_heads: 2,
        model_dim: 16,
        ffn_dim: 32,
        awe_dim: 16,
        input_dim: dim,
    })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[test]
fn contrastive_loss_falls_on_two_classes() {
    let segs = two_class_segments();
    let pairs = sample_pair_indices(&segs, 2000, 1).unwrap();
    let mut model = Model::<f32>::new(small_transformer(16), 2).unwrap();
    let cfg = TrainConfig { steps: 300, batch_size: 8, seed: 3, ..TrainConfig::default() };
    let report = train(&mut model, &segs, &pairs, &cfg).unwrap();
    // two word types allow two distinct-type pairs per batch
    assert_eq!(report.batch_size, 2);
    let losses: Vec<f64> = report.log.iter().map(|r| r.loss).collect();
    assert_eq!(losses.len(), 300);
    let (first, last) = (mean(&losses[..50]), mean(&losses[250..]));
    assert!(last < first, "initial {first}, final {last}");
}

#[test]
fn zero_steps_leave_the_initialization() {
    let segs = two_class_segments();
    let pairs = sample_pair_indices(&segs, 20, 1).unwrap();
    let init = Model::<f64>::new(small_transformer(16), 9).unwrap();
    let mut model = init.clone();
    let cfg = TrainConfig { steps: 0, ..TrainConfig::default() };
    let report = train(&mut model, &segs, &pairs, &cfg).unwrap();
    assert!(report.log.is_empty());
    assert_eq!(model.to_bytes(), init.to_bytes());
}

#[test]
fn same_seed_gives_identical_runs_in_f64() {
    let segs = two_class_segments();
    let pairs = sample_pair_indices(&segs, 200, 4).unwrap();
    for config in [
        small_transformer(16),
        ModelConfig::ContrastiveRnn(RnnConfig { n_layers: 1, hidden_dim: 8, awe_dim: 8, input_dim: 16 }),
        ModelConfig::CaeRnn(RnnConfig { n_layers: 1, hidden_dim: 8, awe_dim: 8, input_dim: 16 }),
    ] {
        let run = || {
            let mut m = Model::<f64>::new(config, 5).unwrap();
            let cfg = TrainConfig { steps: 15, batch_size: 4, seed: 6, ..TrainConfig::default() };
            let r = train(&mut m, &segs, &pairs, &cfg).unwrap();
            (r.log.iter().map(|l| l.loss.to_bits()).collect::<Vec<_>>(), m.to_bytes())
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b, "{}", config.embedder_id());
    }
}

#[test]
fn reconstruction_training_reduces_error() {
    let segs = two_class_segments();
    let pairs = sample_pair_indices(&segs, 400, 1).unwrap();
    let mut model =
        Model::<f32>::new(ModelConfig::CaeRnn(RnnConfig { n_layers: 1, hidden_dim: 16, awe_dim: 8, input_dim: 16 }), 1)
            .unwrap();
    let cfg = TrainConfig { steps: 150, batch_size: 4, seed: 2, ..TrainConfig::default() };
    let losses: Vec<f64> = train(&mut model, &segs, &pairs, &cfg).unwrap().log.iter().map(|r| r.loss).collect();
    assert!(mean(&losses[100..]) < mean(&losses[..50]));
}

#[test]
fn checkpoint_roundtrip_embeds_identically() {
    let dir = tempfile::tempdir().unwrap();
    let segs = two_class_segments();
    for (i, config) in [
        small_transformer(16),
        ModelConfig::ContrastiveRnn(RnnConfig { n_layers: 2, hidden_dim: 6, awe_dim: 5, input_dim: 16 }),
        ModelConfig::CaeRnn(RnnConfig { n_layers: 1, hidden_dim: 6, awe_dim: 5, input_dim: 16 }),
    ]
    .into_iter()
    .enumerate()
    {
        let m32 = Model::<f32>::new(config, 11).unwrap();
        let m64 = Model::<f64>::new(config, 11).unwrap();
        for (j, m) in [&m32 as &dyn Embedder, &m64 as &dyn Embedder].into_iter().enumerate() {
            let path = dir.path().join(format!("{i}-{j}.ckpt"));
            if j == 0 {
                m32.save(&path).unwrap();
            } else {
                m64.save(&path).unwrap();
            }
            let loaded = load_embedder(&path).unwrap();
            assert_eq!(loaded.id(), config.embedder_id());
            for s in &segs[..3] {
                assert_eq!(loaded.embed_frames(&s.frames).unwrap(), m.embed_frames(&s.frames).unwrap());
            }
        }
    }
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let bytes = Model::<f32>::new(small_transformer(4), 0).unwrap().to_bytes();
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(load_embedder(&path), Err(Error::Checkpoint(_))));
    std::fs::write(&path, b"not a checkpoint").unwrap();
    assert!(matches!(load_embedder(&path), Err(Error::Checkpoint(_))));
}

#[test]
fn invalid_pairs_and_configs() {
    let segs = two_class_segments();
    let mut model = Model::<f32>::new(small_transformer(16), 0).unwrap();
    let cfg = TrainConfig { steps: 1, ..TrainConfig::default() };
    assert!(matches!(train(&mut model, &segs, &[], &cfg), Err(Error::NoPositivePairsAvailable)));
    let cross = segs.iter().position(|s| s.label != segs[0].label).unwrap();
    assert!(matches!(train(&mut model, &segs, &[(0, cross)], &cfg), Err(Error::InvalidConfig(_))));
    let mut wrong_dim = Model::<f32>::new(small_transformer(8), 0).unwrap();
    let pairs = sample_pair_indices(&segs, 2, 0).unwrap();
    assert!(train(&mut wrong_dim, &segs, &pairs, &cfg).is_err());
}
