use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use icprobe::scorer::wire::SequenceAggregation;
use icprobe::scorer::DEFAULT_PARALLELISM;
use icprobe::stats::DEFAULT_PERMUTATIONS;

#[derive(Debug, Parser)]
#[command(
    name = "icprobe",
    version,
    about = "Probe language models for implicit causality bias"
)]
pub struct Cli {
    /// More log output (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate stimuli and a run manifest.
    Gen(GenArgs),
    /// Score the stimuli with a backend.
    Probe(ProbeArgs),
    /// Per-verb bias scores and their correlation with human norms.
    Bias(BiasArgs),
    /// Accuracy on congruent, incongruent and neutral explanations.
    Congruency(OutArgs),
    /// Linear probes on decontextualized verb embeddings.
    Repprobe(RepprobeArgs),
    /// Human-readable summary of whatever stages have run.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CliMode {
    Cloze,
    Open,
    Swapped,
    Explanation,
}

#[derive(Debug, Args)]
pub struct OutArgs {
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub out: OutArgs,
    /// Verb norms CSV (default: bundled sample).
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Name pool CSV (default: bundled sample).
    #[arg(long)]
    pub names: Option<PathBuf>,
    /// Nonce word list (default: bundled sample).
    #[arg(long)]
    pub nonce: Option<PathBuf>,
    /// Explanation pairs JSONL (default: bundled sample).
    #[arg(long)]
    pub explanations: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = CliMode::Cloze)]
    pub mode: CliMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScorerKind {
    Oracle,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OraclePolicyArg {
    /// Reproduce the lexicon's human bias scores.
    Human,
    /// Always prefer the referent of each verb's bias polarity.
    Ic,
    /// Always prefer the referent named by the explanation.
    Semantic,
    /// Seeded fair coin.
    Coin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AggregationArg {
    MeanProb,
    MeanLogprob,
}

impl From<AggregationArg> for SequenceAggregation {
    fn from(a: AggregationArg) -> Self {
        match a {
            AggregationArg::MeanProb => SequenceAggregation::MeanProb,
            AggregationArg::MeanLogprob => SequenceAggregation::MeanLogprob,
        }
    }
}

#[derive(Debug, Args)]
pub struct BackendArgs {
    #[arg(long, value_enum, default_value_t = ScorerKind::Oracle)]
    pub scorer: ScorerKind,
    /// Base URL of an HTTP backend.
    #[arg(long, required_if_eq("scorer", "http"))]
    pub endpoint: Option<String>,
    /// Response cache directory; overrides ICPROBE_CACHE_DIR (default: <out>/cache).
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Backend id used for the cache file (default: derived from the endpoint).
    #[arg(long)]
    pub backend_id: Option<String>,
    #[arg(long, value_enum, default_value_t = OraclePolicyArg::Human)]
    pub oracle_policy: OraclePolicyArg,
    /// Embedding dimension of the oracle.
    #[arg(long, default_value_t = icprobe::scorer::oracle::DEFAULT_EMBED_DIM)]
    pub embed_dim: usize,
    /// Maximum requests in flight.
    #[arg(long, default_value_t = DEFAULT_PARALLELISM)]
    pub jobs: usize,
    /// Sequence score aggregation.
    #[arg(long, value_enum, default_value_t = AggregationArg::MeanProb)]
    pub aggregation: AggregationArg,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[command(flatten)]
    pub out: OutArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct BiasArgs {
    #[command(flatten)]
    pub out: OutArgs,
    /// Subtract per-group mean pronoun scores before tallying.
    #[arg(long)]
    pub discount: bool,
    #[arg(long, default_value_t = DEFAULT_PERMUTATIONS)]
    pub permutations: usize,
}

#[derive(Debug, Args)]
pub struct RepprobeArgs {
    #[command(flatten)]
    pub out: OutArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[arg(long, default_value_t = 100)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0.05)]
    pub pca_fraction: f64,
    #[arg(long, default_value_t = 0.5)]
    pub split_fraction: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub lda_ridge: f64,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub out: OutArgs,
    /// Also write summary.svg.
    #[arg(long)]
    pub svg: bool,
}
