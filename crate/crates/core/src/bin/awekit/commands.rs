use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use awekit::corpus::{
    extract_segments, load_corpus, normalize, sample_pair_indices, write_corpus, Corpus, NormalizationScope,
};
use awekit::embed::{
    load_embedder, Embedder, Meanpool, Model, ModelConfig, RnnConfig, Subsample, SubsampleConfig, TransformerConfig,
};
use awekit::gradsuite;
use awekit::kws::{dtw_search_all, read_detections, search, write_detections, KeywordTemplateSet, WindowConfig};
use awekit::metrics::{evaluate, GroundTruth, MetricsReport, DEFAULT_MIN_OCCURRENCES};
use awekit::nn::{AdamConfig, Real};
use awekit::synth::{generate, SynthConfig};
use awekit::train::{same_different_ap, train_with, TrainConfig};
use awekit::Error;

use crate::args::*;
use crate::config::required;

const DEFAULT_PAIRS: usize = 20_000;

#[derive(Debug, thiserror::Error)]
#[error("{0} gradient check(s) exceeded the tolerance")]
pub struct GradcheckFailed(pub usize);

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(())
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn normalized(corpus: &Corpus, norm: Norm) -> Result<Corpus> {
    Ok(normalize(corpus, NormalizationScope::new(norm.into()))?)
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let out = required(&a.out, "out")?;
    let d = SynthConfig::default();
    let cfg = SynthConfig {
        seed: a.seed.unwrap_or(d.seed),
        n_types: a.n_types.unwrap_or(d.n_types),
        dim: a.dim.unwrap_or(d.dim),
        n_search: a.n_search.unwrap_or(d.n_search),
        train_per_type: a.train_per_type.unwrap_or(d.train_per_type),
        heldout_per_type: a.heldout_per_type.unwrap_or(d.heldout_per_type),
        templates_per_type: a.templates_per_type.unwrap_or(d.templates_per_type),
        noise: a.noise.unwrap_or(d.noise),
        ..d
    };
    let data = generate(&cfg)?;
    create_dir(&out)?;
    for (name, corpus) in [
        ("train", &data.train),
        ("heldout", &data.heldout),
        ("templates", &data.templates),
        ("search", &data.search),
    ] {
        write_corpus(corpus, &out.join(format!("{name}.jsonl")))?;
    }
    GroundTruth::from_corpus(&data.search).write_jsonl(&out.join("truth.jsonl"))?;
    write_file(&out.join("synth.json"), pretty(&cfg))?;
    println!("wrote synthetic corpus to {}", out.display());
    Ok(())
}

fn model_config(a: &TrainArgs, input_dim: usize) -> ModelConfig {
    match a.embedder.unwrap_or(TrainableKind::ContrastiveTransformer) {
        TrainableKind::ContrastiveTransformer => {
            let d = TransformerConfig::new(input_dim);
            ModelConfig::ContrastiveTransformer(TransformerConfig {
                n_layers: a.n_layers.unwrap_or(d.n_layers),
                n_heads: a.n_heads.unwrap_or(d.n_heads),
                model_dim: a.model_dim.unwrap_or(d.model_dim),
                ffn_dim: a.ffn_dim.unwrap_or(d.ffn_dim),
                awe_dim: a.awe_dim.unwrap_or(d.awe_dim),
                input_dim,
            })
        }
        kind => {
            let d = RnnConfig::new(input_dim);
            let c = RnnConfig {
                n_layers: a.n_layers.unwrap_or(d.n_layers),
                hidden_dim: a.hidden_dim.unwrap_or(d.hidden_dim),
                awe_dim: a.awe_dim.unwrap_or(d.awe_dim),
                input_dim,
            };
            if kind == TrainableKind::CaeRnn {
                ModelConfig::CaeRnn(c)
            } else {
                ModelConfig::ContrastiveRnn(c)
            }
        }
    }
}

struct Trained {
    checkpoint: Vec<u8>,
    batch_size: usize,
    final_loss: Option<f64>,
    heldout_ap: Option<f64>,
}

fn train_typed<T: Real>(
    config: ModelConfig,
    seed: u64,
    segments: &[awekit::corpus::WordSegment],
    pairs: &[(usize, usize)],
    cfg: &TrainConfig,
    log_path: &Path,
    heldout: Option<&Corpus>,
) -> Result<Trained> {
    let mut model = Model::<T>::new(config, seed)?;
    let mut log = Vec::new();
    let report = train_with(&mut model, segments, pairs, cfg, |rec| {
        serde_json::to_writer(&mut log, rec).expect("record serializes");
        log.push(b'\n');
    })?;
    write_file(log_path, &log)?;
    let heldout_ap = match heldout {
        Some(c) => {
            let items = c
                .sequences()
                .iter()
                .filter_map(|s| s.words.first().map(|w| (w.label.clone(), s)))
                .map(|(label, s)| Ok((label, model.embed(s)?.vector)))
                .collect::<Result<Vec<_>, Error>>()?;
            Some(same_different_ap(&items)?)
        }
        None => None,
    };
    Ok(Trained {
        checkpoint: model.to_bytes(),
        batch_size: report.batch_size,
        final_loss: report.log.last().map(|r| r.loss),
        heldout_ap,
    })
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let manifest = required(&a.manifest, "manifest")?;
    let out = required(&a.out, "out")?;
    let seed = required(&a.seed, "seed")?;
    let norm = a.normalize.unwrap_or(Norm::PerSpeaker);
    let corpus = normalized(&load_corpus(&manifest)?, norm)?;
    let heldout = match &a.heldout {
        Some(p) => Some(normalized(&load_corpus(p)?, norm)?),
        None => None,
    };
    let Some(input_dim) = corpus.dim() else {
        bail!(Error::NoPositivePairsAvailable);
    };
    let segments = extract_segments(&corpus)?;
    let pairs = sample_pair_indices(&segments, a.n_pairs.unwrap_or(DEFAULT_PAIRS), seed.wrapping_add(1))?;
    let config = model_config(a, input_dim);
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        temperature: a.temperature.unwrap_or(d.temperature),
        batch_size: a.batch_size.unwrap_or(d.batch_size),
        steps: a.steps.unwrap_or(d.steps),
        seed: seed.wrapping_add(2),
        adam: AdamConfig {
            learning_rate: a.learning_rate.unwrap_or(d.adam.learning_rate),
            ..d.adam
        },
        max_grad_norm: a.max_grad_norm,
    };
    create_dir(&out)?;
    let log_path = out.join("train_log.jsonl");
    let dtype = a.dtype.unwrap_or(Dtype::F32);
    let trained = match dtype {
        Dtype::F32 => train_typed::<f32>(config, seed, &segments, &pairs, &cfg, &log_path, heldout.as_ref())?,
        Dtype::F64 => train_typed::<f64>(config, seed, &segments, &pairs, &cfg, &log_path, heldout.as_ref())?,
    };
    let ckpt_path = out.join("model.ckpt");
    write_file(&ckpt_path, &trained.checkpoint)?;
    let run = json!({
        "command": "train",
        "version": env!("CARGO_PKG_VERSION"),
        "args": a,
        "model": config,
        "train": cfg,
        "dtype": dtype,
        "n_segments": segments.len(),
        "n_pairs": pairs.len(),
        "effective_batch_size": trained.batch_size,
        "final_loss": trained.final_loss,
        "heldout_same_different_ap": trained.heldout_ap,
        "checkpoint_sha256": sha256_hex(&trained.checkpoint),
    });
    write_file(&out.join("run.json"), pretty(&run))?;
    println!(
        "trained {} for {} steps; checkpoint {}",
        config.embedder_id(),
        cfg.steps,
        ckpt_path.display()
    );
    if let Some(ap) = trained.heldout_ap {
        println!("held-out same-different AP {ap:.4}");
    }
    Ok(())
}

fn embedder_for(kind: Scorer, checkpoint: &Option<PathBuf>, k: Option<usize>) -> Result<Box<dyn Embedder>> {
    Ok(match kind {
        Scorer::Meanpool => Box::new(Meanpool),
        Scorer::Subsample => Box::new(Subsample {
            config: SubsampleConfig {
                k: k.unwrap_or(SubsampleConfig::default().k),
            },
        }),
        Scorer::Model => load_embedder(&required(checkpoint, "checkpoint")?)?,
        Scorer::Dtw => bail!(Error::InvalidConfig("dtw is a search scorer, not an embedder".into())),
    })
}

fn default_scorer(checkpoint: &Option<PathBuf>) -> Scorer {
    if checkpoint.is_some() {
        Scorer::Model
    } else {
        Scorer::Meanpool
    }
}

pub fn embed(a: &EmbedArgs) -> Result<()> {
    let manifest = required(&a.manifest, "manifest")?;
    let out = required(&a.out, "out")?;
    let embedder = embedder_for(a.embedder.unwrap_or(default_scorer(&a.checkpoint)), &a.checkpoint, a.k)?;
    let corpus = normalized(&load_corpus(&manifest)?, a.normalize.unwrap_or(Norm::None))?;
    let mut buf = Vec::new();
    let mut emit = |id: String, label: Option<&str>, vector: Vec<f32>| {
        let rec = json!({"id": id, "label": label, "embedder_id": embedder.id(), "vector": vector});
        serde_json::to_writer(&mut buf, &rec).expect("record serializes");
        buf.push(b'\n');
    };
    if a.segments.unwrap_or(false) {
        for s in extract_segments(&corpus)? {
            let v = embedder.embed_frames(&s.frames)?;
            emit(format!("{}:{}-{}", s.source, s.start_frame, s.end_frame), Some(&s.label), v);
        }
    } else {
        for s in corpus.sequences() {
            let awe = embedder.embed(s)?;
            emit(s.utterance_id.clone(), s.words.first().map(|w| w.label.as_str()), awe.vector);
        }
    }
    write_file(&out, buf)?;
    Ok(())
}

fn window_config(min_len: Option<usize>, max_len: Option<usize>, len_step: Option<usize>, stride: Option<usize>) -> Result<WindowConfig> {
    let d = WindowConfig::default();
    let cfg = WindowConfig {
        min_len: min_len.unwrap_or(d.min_len),
        max_len: max_len.unwrap_or(d.max_len),
        len_step: len_step.unwrap_or(d.len_step),
        stride: stride.unwrap_or(d.stride),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn keyword_sets(templates: &Corpus, path: &Path) -> Result<Vec<KeywordTemplateSet>> {
    let sets = KeywordTemplateSet::from_corpus(templates);
    if sets.is_empty() {
        bail!(Error::InvalidConfig(format!(
            "{}: templates need a word alignment naming their keyword",
            path.display()
        )));
    }
    Ok(sets)
}

pub fn search_cmd(a: &SearchArgs) -> Result<()> {
    let templates_path = required(&a.templates, "templates")?;
    let search_path = required(&a.search, "search")?;
    let out = required(&a.out, "out")?;
    let window = window_config(a.min_len, a.max_len, a.len_step, a.stride)?;
    let scorer = a.embedder.unwrap_or(default_scorer(&a.checkpoint));
    let templates = normalized(
        &load_corpus(&templates_path)?,
        a.template_norm.unwrap_or(Norm::PerSpeaker),
    )?;
    let corpus = normalized(&load_corpus(&search_path)?, a.search_norm.unwrap_or(Norm::PerUtterance))?;
    let keywords = keyword_sets(&templates, &templates_path)?;
    let rankings = match scorer {
        Scorer::Dtw => dtw_search_all(&keywords, &corpus)?,
        kind => search(&keywords, &corpus, embedder_for(kind, &a.checkpoint, a.k)?.as_ref(), &window)?,
    };
    write_detections(&out, &rankings)?;
    println!(
        "{} keywords x {} utterances -> {}",
        rankings.len(),
        corpus.len(),
        out.display()
    );
    Ok(())
}

fn print_summary(report: &MetricsReport) {
    println!(
        "MAP {:.4}  P@10 {:.4}  P@N {:.4}  ({} of {} keywords kept)",
        report.map,
        report.mean_p_at_10,
        report.mean_p_at_n,
        report.kept_keywords.len(),
        report.keywords.len()
    );
}

pub fn evaluate_cmd(a: &EvaluateArgs) -> Result<()> {
    let detections = required(&a.detections, "detections")?;
    let truth = match (&a.truth, &a.search_manifest) {
        (Some(t), _) => GroundTruth::read_jsonl(t)?,
        (None, Some(m)) => GroundTruth::from_corpus(&load_corpus(m)?),
        (None, None) => bail!(Error::InvalidConfig("--truth or --search-manifest is required".into())),
    };
    let rankings = read_detections(&detections)?;
    let report = evaluate(&rankings, &truth, a.min_occurrences.unwrap_or(DEFAULT_MIN_OCCURRENCES))?;
    if let Some(out) = &a.out {
        write_file(out, report.to_json())?;
    }
    if let Some(tsv) = &a.tsv {
        write_file(tsv, report.to_tsv())?;
    }
    print_summary(&report);
    Ok(())
}

fn layer_path(pattern: &str, layer: usize) -> Result<PathBuf> {
    if !pattern.contains("{}") {
        bail!(Error::InvalidConfig(format!("pattern {pattern:?} has no {{}} placeholder")));
    }
    Ok(PathBuf::from(pattern.replace("{}", &layer.to_string())))
}

fn utterance_ids(c: &Corpus) -> BTreeSet<&str> {
    c.sequences().iter().map(|s| s.utterance_id.as_str()).collect()
}

pub fn layer_sweep(a: &LayerSweepArgs) -> Result<()> {
    let layers = required(&a.layers, "layers")?;
    if layers.is_empty() {
        bail!(Error::InvalidConfig("--layers is empty".into()));
    }
    let tpat = required(&a.templates_pattern, "templates-pattern")?;
    let spat = required(&a.search_pattern, "search-pattern")?;
    let out_dir = required(&a.out_dir, "out-dir")?;
    let window = window_config(a.min_len, a.max_len, a.len_step, a.stride)?;
    let min_occ = a.min_occurrences.unwrap_or(DEFAULT_MIN_OCCURRENCES);
    let file_truth = match &a.truth {
        Some(t) => Some(GroundTruth::read_jsonl(t)?),
        None => None,
    };

    let mut loaded = Vec::with_capacity(layers.len());
    for &layer in &layers {
        let tp = layer_path(&tpat, layer)?;
        let templates = load_corpus(&tp)?;
        let corpus = load_corpus(&layer_path(&spat, layer)?)?;
        loaded.push((layer, tp, templates, corpus));
    }
    let (first_layer, _, t0, s0) = &loaded[0];
    for (layer, _, t, s) in &loaded[1..] {
        if utterance_ids(t) != utterance_ids(t0) || utterance_ids(s) != utterance_ids(s0) {
            bail!(Error::LayerSetInconsistent(format!(
                "layer {layer} has different utterances than layer {first_layer}"
            )));
        }
    }

    let mut rows = Vec::with_capacity(layers.len());
    for (layer, tp, templates, corpus) in &loaded {
        let templates = normalized(templates, a.template_norm.unwrap_or(Norm::PerSpeaker))?;
        let corpus = normalized(corpus, a.search_norm.unwrap_or(Norm::PerUtterance))?;
        let truth = file_truth.clone().unwrap_or_else(|| GroundTruth::from_corpus(&corpus));
        let rankings = search(&keyword_sets(&templates, tp)?, &corpus, &Meanpool, &window)?;
        let report = evaluate(&rankings, &truth, min_occ)?;
        eprintln!("layer {layer}: MAP {:.4}", report.map);
        rows.push((*layer, report));
    }

    create_dir(&out_dir)?;
    let mut tsv = String::from("layer\tMAP\tP@10\tP@N\n");
    for (layer, r) in &rows {
        tsv.push_str(&format!(
            "{layer}\t{:.6}\t{:.6}\t{:.6}\n",
            r.map, r.mean_p_at_10, r.mean_p_at_n
        ));
    }
    write_file(&out_dir.join("layer_sweep.tsv"), &tsv)?;
    let x: Vec<usize> = rows.iter().map(|(l, _)| *l).collect();
    let series = |f: fn(&MetricsReport) -> f64| rows.iter().map(|(_, r)| f(r)).collect::<Vec<_>>();
    let plot = json!({
        "x_label": "layer",
        "y_label": "score",
        "x": x,
        "series": [
            {"name": "MAP", "y": series(|r| r.map)},
            {"name": "P@10", "y": series(|r| r.mean_p_at_10)},
            {"name": "P@N", "y": series(|r| r.mean_p_at_n)},
        ],
    });
    write_file(&out_dir.join("layer_sweep.json"), pretty(&plot))?;
    print!("{tsv}");
    Ok(())
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<()> {
    let entries = gradsuite::run(
        a.trials.unwrap_or(gradsuite::DEFAULT_TRIALS),
        a.seed.unwrap_or(0),
    );
    let mut out = std::io::stdout().lock();
    let mut failed = 0;
    for e in &entries {
        let status = if e.passes() { "ok" } else { "FAIL" };
        failed += usize::from(!e.passes());
        writeln!(
            out,
            "{status:<4} {:<24} trials {:>3}  checked {:>6}  max rel err {:.3e}",
            e.name, e.trials, e.report.checked, e.report.max_rel_err
        )
        .context("writing to stdout")?;
    }
    if failed > 0 {
        bail!(GradcheckFailed(failed));
    }
    Ok(())
}
