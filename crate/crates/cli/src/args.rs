use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(name = "ulkit", version, about = "Unlikelihood training, decoding, evaluation and dedup toolkit")]
pub struct Cli {
    /// Worker threads for parallel evaluation and dedup (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum Command {
    /// Generate a synthetic outline-to-paragraph corpus.
    Synth(SynthArgs),
    /// Train a model, optionally on top of an existing checkpoint.
    Train(TrainArgs),
    /// Generate paragraphs for the outlines of a corpus.
    Generate(GenerateArgs),
    /// Compute teacher-forced and generation metrics for one or more models.
    Evaluate(EvaluateArgs),
    /// Remove near-duplicate sentences from paragraphs.
    Dedup(DedupArgs),
    /// Report blocklist matches in a corpus.
    Scan(ScanArgs),
    /// Time naive against automaton blocklist extraction.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CorpusArgs {
    /// Corpus file, one JSON record per line.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Fail on the first malformed line instead of skipping it.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub num_samples: usize,
    /// Size of the synthetic lexicon.
    #[arg(long, default_value_t = 120)]
    pub vocab_size: usize,
    /// Approximate paragraph length in tokens.
    #[arg(long, default_value_t = 40)]
    pub target_len: usize,
    #[arg(long, default_value_t = 0.5)]
    pub repeat_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    pub blocklist_plant_rate: f64,
    /// Number of blocklist phrases written to blocklist.txt.
    #[arg(long, default_value_t = 3)]
    pub blocklist_size: usize,
    /// Share of samples written to heldout.jsonl.
    #[arg(long, default_value_t = 0.1)]
    pub heldout_fraction: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[value(rename_all = "snake_case")]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveArg {
    Mle,
    TokenUl,
    SeqUl,
    SeqUlBlock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[value(rename_all = "snake_case")]
#[serde(rename_all = "snake_case")]
pub enum TokenBaseArg {
    Mle,
    TokenUl,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub input: CorpusArgs,
    #[arg(long, value_enum, default_value_t = ObjectiveArg::Mle)]
    pub objective: ObjectiveArg,
    /// Checkpoint to write; the step log and manifest are written next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from this checkpoint (its vocabulary and architecture are kept).
    #[arg(long)]
    pub init_from: Option<PathBuf>,
    /// Blocklist file, required by seq_ul_block.
    #[arg(long)]
    pub blocklist: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 10.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 4)]
    pub seq_ngram: usize,
    #[arg(long, default_value_t = 0.5)]
    pub mix_prob: f64,
    #[arg(long, default_value_t = 2)]
    pub block_n_min: usize,
    #[arg(long, default_value_t = 10)]
    pub block_n_max: usize,
    /// Allow single-token blocklist phrases.
    #[arg(long)]
    pub allow_unigram_blocks: bool,
    /// Token-level objective on the non-sequence share of seq_ul steps
    /// (default: token_ul when continuing a UL-trained checkpoint, else mle).
    #[arg(long, value_enum)]
    pub token_base: Option<TokenBaseArg>,
    /// Gold paragraph tokens kept before the decoded continuation.
    #[arg(long, default_value_t = 0)]
    pub seq_prefix_len: usize,
    #[arg(long, default_value_t = 32)]
    pub continuation_len: usize,
    /// For seq_ul_block: penalize only blocklist matches, not repeated n-grams.
    #[arg(long)]
    pub block_only: bool,
    #[arg(long, default_value_t = 1)]
    pub epochs: usize,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 1.0)]
    pub clip_norm: f64,
    #[arg(long, default_value_t = 64)]
    pub embed_dim: usize,
    #[arg(long, default_value_t = 128)]
    pub ffn_dim: usize,
    #[arg(long, default_value_t = 128)]
    pub context_len: usize,
    #[arg(long, default_value_t = 1)]
    pub num_blocks: usize,
    /// Vocabulary cap, special tokens included (fresh vocabularies only).
    #[arg(long, default_value_t = 10_000)]
    pub max_vocab: usize,
    /// Lowercase text before tokenizing (fresh vocabularies only).
    #[arg(long)]
    pub casefold: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[value(rename_all = "snake_case")]
#[serde(rename_all = "snake_case")]
pub enum StrategyArg {
    Greedy,
    Beam,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DecodeArgs {
    #[arg(long, value_enum, default_value_t = StrategyArg::Beam)]
    pub strategy: StrategyArg,
    /// Beam width (1 is greedy).
    #[arg(long, default_value_t = 5)]
    pub beam: usize,
    #[arg(long, default_value_t = 64)]
    pub max_len: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub input: CorpusArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output corpus: each outline with its generated paragraph.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub decode: DecodeArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub input: CorpusArgs,
    /// Checkpoint to evaluate; repeat for a side-by-side table.
    #[arg(long, required = true)]
    pub checkpoint: Vec<PathBuf>,
    /// Blocklist for the blocklist-output count.
    #[arg(long)]
    pub blocklist: Option<PathBuf>,
    #[arg(long)]
    pub allow_unigram_blocks: bool,
    /// rep-l / wrep-l window; repeatable.
    #[arg(long, default_values_t = [128])]
    pub rep_window: Vec<usize>,
    /// seq-rep-n order; repeatable.
    #[arg(long, default_values_t = [1, 4])]
    pub seq_rep: Vec<usize>,
    /// Report file (JSON); the table and manifest are written next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub decode: DecodeArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[value(rename_all = "snake_case")]
#[serde(rename_all = "snake_case")]
pub enum KeepArg {
    First,
    Last,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[value(rename_all = "snake_case")]
#[serde(rename_all = "snake_case")]
pub enum LinkageArg {
    AnyEarlier,
    Greedy,
}

#[derive(Debug, Args, Serialize)]
pub struct DedupArgs {
    #[command(flatten)]
    pub input: CorpusArgs,
    /// Sentence embeddings (`index dim v1 .. vdim` per line); default is a
    /// bag-of-tokens embedding.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = 0.91)]
    pub threshold: f64,
    #[arg(long, value_enum, default_value_t = KeepArg::First)]
    pub keep: KeepArg,
    #[arg(long, value_enum, default_value_t = LinkageArg::AnyEarlier)]
    pub linkage: LinkageArg,
    /// Also report repetition statistics at these thresholds.
    #[arg(long, num_args = 1..)]
    pub sweep: Vec<f64>,
    #[arg(long)]
    pub casefold: bool,
    /// Deduplicated corpus; the drop report and manifest are written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ScanArgs {
    #[command(flatten)]
    pub input: CorpusArgs,
    #[arg(long)]
    pub blocklist: PathBuf,
    #[arg(long)]
    pub allow_unigram_blocks: bool,
    #[arg(long)]
    pub casefold: bool,
    /// Match file, one JSON record per match.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 10_000)]
    pub stream_len: usize,
    #[arg(long, default_value_t = 1_000)]
    pub phrases: usize,
    #[arg(long, default_value_t = 200)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 2)]
    pub n_min: usize,
    #[arg(long, default_value_t = 10)]
    pub n_max: usize,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report file (JSON); printed to stdout as a table as well.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
