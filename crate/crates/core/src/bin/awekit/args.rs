use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use awekit::corpus::NormalizationMode;

#[derive(Debug, Parser)]
#[command(name = "awekit", version, about = "Acoustic word embeddings and query-by-example keyword search")]
pub struct Cli {
    /// Worker threads; defaults to one per core. Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a contrastive or reconstruction embedder on word pairs.
    Train(TrainArgs),
    /// Write one embedding per utterance (or per aligned word) as JSON lines.
    Embed(EmbedArgs),
    /// Score keyword templates against a search corpus.
    Search(SearchArgs),
    /// Compute AP, P@10 and P@N from detections and ground truth.
    Evaluate(EvaluateArgs),
    /// Meanpool search over features taken from several model layers.
    LayerSweep(LayerSweepArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
    /// Generate a synthetic word corpus.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Norm {
    PerUtterance,
    PerSpeaker,
    None,
}

impl From<Norm> for NormalizationMode {
    fn from(n: Norm) -> Self {
        match n {
            Norm::PerUtterance => NormalizationMode::PerUtterance,
            Norm::PerSpeaker => NormalizationMode::PerSpeaker,
            Norm::None => NormalizationMode::None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainableKind {
    ContrastiveTransformer,
    ContrastiveRnn,
    CaeRnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scorer {
    Meanpool,
    Subsample,
    /// A trained checkpoint given by `--checkpoint`.
    Model,
    /// Subsequence DTW on the raw frames.
    Dtw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dtype {
    F32,
    F64,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainArgs {
    /// TOML file with defaults for any of these options.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Manifest of utterances with word alignments.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Output directory for model.ckpt, train_log.jsonl and run.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub embedder: Option<TrainableKind>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub max_grad_norm: Option<f64>,
    /// Ordered positive pairs to sample (both orderings count).
    #[arg(long)]
    pub n_pairs: Option<usize>,
    #[arg(long, value_enum)]
    pub normalize: Option<Norm>,
    #[arg(long, value_enum)]
    pub dtype: Option<Dtype>,
    #[arg(long)]
    pub n_layers: Option<usize>,
    #[arg(long)]
    pub n_heads: Option<usize>,
    #[arg(long)]
    pub model_dim: Option<usize>,
    #[arg(long)]
    pub ffn_dim: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub awe_dim: Option<usize>,
    /// Isolated-word manifest for a same-different score after training.
    #[arg(long)]
    pub heldout: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub embedder: Option<Scorer>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Frames kept by the subsample embedder.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, value_enum)]
    pub normalize: Option<Norm>,
    /// Embed each aligned word instead of whole utterances.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub segments: Option<bool>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Isolated keyword instances; each is labeled by its first word alignment.
    #[arg(long)]
    pub templates: Option<PathBuf>,
    #[arg(long)]
    pub search: Option<PathBuf>,
    /// Detections output (JSON lines).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub embedder: Option<Scorer>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, value_enum)]
    pub template_norm: Option<Norm>,
    #[arg(long, value_enum)]
    pub search_norm: Option<Norm>,
    #[arg(long)]
    pub min_len: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub len_step: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub detections: Option<PathBuf>,
    /// Ground truth as JSON lines of {"keyword", "utterance_id"}.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Take ground truth from this manifest's word alignments instead.
    #[arg(long)]
    pub search_manifest: Option<PathBuf>,
    /// Report output (JSON).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-keyword table output (TSV).
    #[arg(long)]
    pub tsv: Option<PathBuf>,
    #[arg(long)]
    pub min_occurrences: Option<usize>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSweepArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Comma-separated layer indices.
    #[arg(long, value_delimiter = ',')]
    pub layers: Option<Vec<usize>>,
    /// Template manifest path with `{}` standing for the layer index.
    #[arg(long)]
    pub templates_pattern: Option<String>,
    /// Search manifest path with `{}` standing for the layer index.
    #[arg(long)]
    pub search_pattern: Option<String>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub min_occurrences: Option<usize>,
    #[arg(long, value_enum)]
    pub template_norm: Option<Norm>,
    #[arg(long, value_enum)]
    pub search_norm: Option<Norm>,
    #[arg(long)]
    pub min_len: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub len_step: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Output directory for train, heldout, templates and search manifests.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_types: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub n_search: Option<usize>,
    #[arg(long)]
    pub train_per_type: Option<usize>,
    #[arg(long)]
    pub heldout_per_type: Option<usize>,
    #[arg(long)]
    pub templates_per_type: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
}
