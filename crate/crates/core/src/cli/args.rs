use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "ragcap", version, about = "Retrieval-augmented image captioning toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic topic-structured corpus.
    Synth(SynthArgs),
    /// Build and edit caption datastores.
    #[command(subcommand)]
    Store(StoreCommand),
    /// Build and query standalone vector indexes.
    #[command(subcommand)]
    Index(IndexCommand),
    /// Train the cross-attention weights from a run config.
    Train(ConfigArgs),
    /// Caption image embeddings.
    Caption(CaptionArgs),
    /// Score captions against references.
    Eval(EvalArgs),
    /// Print trainable cross-attention parameter counts.
    CountParams(CountParamsArgs),
    /// Train paired retrieval / no-retrieval models over a grid of d.
    Ablate(ConfigArgs),
    /// Summarize an ablation run directory.
    Report(ReportArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// TOML domain spec.
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the spec seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Trailing examples written as a separate validation split.
    #[arg(long, default_value_t = 0)]
    pub val: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum IndexKindArg {
    Auto,
    Flat,
    Ivf,
}

#[derive(Debug, Args)]
pub struct RecordsInput {
    /// Record file (`#ragcap-records v1`).
    #[arg(long)]
    pub records: PathBuf,
    /// Vector file resolving `@row` embeddings.
    #[arg(long)]
    pub vectors: Option<PathBuf>,
    #[arg(long, default_value_t = crate::datastore::DEFAULT_MAX_TOKENS)]
    pub max_tokens: usize,
    #[arg(long)]
    pub dedup: bool,
}

#[derive(Debug, Subcommand)]
pub enum StoreCommand {
    Build {
        #[command(flatten)]
        input: RecordsInput,
        #[arg(long)]
        out: PathBuf,
        /// Record files whose text defines the vocabulary (default: the input records).
        #[arg(long = "vocab-from")]
        vocab_from: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = IndexKindArg::Auto)]
        index: IndexKindArg,
        #[arg(long, default_value_t = crate::vector_index::DEFAULT_CLUSTERS)]
        clusters: usize,
        #[arg(long, default_value_t = crate::vector_index::DEFAULT_NPROBE)]
        nprobe: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Replace all records, keeping vocabulary and index policy.
    Swap {
        #[arg(long)]
        store: PathBuf,
        #[command(flatten)]
        input: RecordsInput,
        #[arg(long)]
        out: PathBuf,
    },
    /// Add records to an existing store.
    Augment {
        #[arg(long)]
        store: PathBuf,
        #[command(flatten)]
        input: RecordsInput,
        #[arg(long)]
        out: PathBuf,
    },
    Stats {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum IndexBuildKind {
    Flat,
    Ivf,
}

#[derive(Debug, Subcommand)]
pub enum IndexCommand {
    /// Index a vector file; ids are row numbers.
    Build {
        #[arg(long)]
        vectors: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = IndexBuildKind::Flat)]
        kind: IndexBuildKind,
        #[arg(long, default_value_t = crate::vector_index::DEFAULT_CLUSTERS)]
        clusters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = crate::vector_index::DEFAULT_KMEANS_ITERS)]
        iters: usize,
    },
    Query {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, default_value_t = crate::datastore::DEFAULT_K)]
        k: usize,
        #[arg(long, default_value_t = crate::vector_index::DEFAULT_NPROBE)]
        nprobe: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the training seed of the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct CaptionArgs {
    /// Vector file of image embeddings.
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = crate::datastore::DEFAULT_K)]
    pub k: usize,
    #[arg(long, default_value_t = crate::caption::DEFAULT_BEAM)]
    pub beam: usize,
    #[arg(long, default_value_t = crate::caption::DEFAULT_MAX_NEW)]
    pub max_new: usize,
    #[arg(long)]
    pub no_retrieval: bool,
    #[arg(long)]
    pub blank_image: bool,
    /// Also print each rendered prompt as a JSON line on stdout.
    #[arg(long)]
    pub show_prompt: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub hyp: PathBuf,
    /// Reference file, one caption per line; repeat for multiple references.
    #[arg(long, required = true)]
    pub refs: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CountParamsArgs {
    /// One or more projection widths, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub d: Vec<usize>,
    #[arg(long, default_value_t = 12)]
    pub layers: usize,
    #[arg(long, default_value_t = 12)]
    pub heads: usize,
    #[arg(long, default_value_t = 768)]
    pub dmodel: usize,
    #[arg(long, default_value_t = 768)]
    pub denc: usize,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub run: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}
