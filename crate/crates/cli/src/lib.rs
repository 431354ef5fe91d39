//! `vcreval`: command-line front end for the caption evaluation engine and
//! the tagging service.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use vcr_core::agreement::{Level, TauVariant};
use vcr_core::corpus::Aggregation;
use vcr_core::harness::ViewKind;
use vcr_core::vcrscore::ClipFeature;

pub const ENV_PREFIX: &str = "VCREVAL_";

#[derive(Debug, Parser)]
#[command(
    name = "vcreval",
    version,
    about = "Image caption evaluation: metrics, learned metric, agreement, tagging"
)]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, short, global = true, env = "VCREVAL_CONFIG")]
    pub config: Option<PathBuf>,
    /// Corpus in the JSONL interchange format.
    #[arg(long, global = true, env = "VCREVAL_CORPUS")]
    pub corpus: Option<PathBuf>,
    #[arg(long, global = true, env = "VCREVAL_SEED")]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

/// Precomputed inputs for embedding, channel and pool metrics.
#[derive(Debug, Clone, Default, Args)]
pub struct InputArgs {
    /// `FAMILY=PATH` or `FAMILY.KIND=PATH` (family: clip, mcip, bert; kind:
    /// image, caption, tokens). JSONL files carry their kinds; other files
    /// are read as binary tables of the given kind.
    #[arg(long, env = "VCREVAL_EMBEDDINGS", value_delimiter = ',')]
    pub embeddings: Vec<String>,
    /// `NAME=PATH` scalar channel files (vilt, bertgrammar, ...).
    #[arg(long, env = "VCREVAL_CHANNELS", value_delimiter = ',')]
    pub channels: Vec<String>,
    /// Object detection labels (JSONL).
    #[arg(long, env = "VCREVAL_DETECTIONS")]
    pub detections: Option<PathBuf>,
    /// Human score aggregation: mean or vote.
    #[arg(long, env = "VCREVAL_HUMAN")]
    pub human: Option<Aggregation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Partition {
    All,
    Train,
    Test,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a corpus, optionally normalize and drop zero-score samples.
    Ingest {
        /// Input corpus (defaults to --corpus).
        #[arg(long, env = "VCREVAL_INPUT")]
        input: Option<PathBuf>,
        /// Map every source's native scale to [0, 1].
        #[arg(long, env = "VCREVAL_NORMALIZE")]
        normalize: bool,
        /// Remove samples whose mean normalized score is 0.
        #[arg(long, env = "VCREVAL_FILTER_ZEROS")]
        filter_zeros: bool,
        #[arg(long, env = "VCREVAL_OUT")]
        out: Option<PathBuf>,
    },
    /// Per-sample metric scores as JSONL.
    Score {
        /// Comma-separated metric names, or `all`. Defaults to every metric
        /// whose inputs are present.
        #[arg(long, env = "VCREVAL_METRICS")]
        metrics: Option<String>,
        #[command(flatten)]
        inputs: InputArgs,
        #[arg(long, env = "VCREVAL_MODEL_FILE")]
        model_file: Option<PathBuf>,
        /// Output file (stdout by default).
        #[arg(long, env = "VCREVAL_OUT")]
        out: Option<PathBuf>,
    },
    /// Fit the learned metric on the training partition.
    Train {
        #[arg(long, env = "VCREVAL_OUT_MODEL")]
        out_model: PathBuf,
        #[arg(long, env = "VCREVAL_TRAIN_FRACTION")]
        train_fraction: Option<f64>,
        /// mcip-ref, mcip, clip-ref or clip.
        #[arg(long, env = "VCREVAL_CLIP_FEATURE")]
        clip_feature: Option<ClipFeature>,
        #[arg(long, env = "VCREVAL_N_ESTIMATORS")]
        n_estimators: Option<usize>,
        #[command(flatten)]
        inputs: InputArgs,
    },
    /// Score a partition, correlate with humans and write the report tables.
    Evaluate {
        #[arg(long, env = "VCREVAL_MODEL_FILE")]
        model_file: Option<PathBuf>,
        #[arg(long, env = "VCREVAL_REPORT_DIR")]
        report_dir: PathBuf,
        #[arg(long, env = "VCREVAL_METRICS")]
        metrics: Option<String>,
        #[arg(long, value_enum, default_value = "test", env = "VCREVAL_PARTITION")]
        partition: Partition,
        #[arg(long, env = "VCREVAL_TRAIN_FRACTION")]
        train_fraction: Option<f64>,
        #[arg(long, default_value_t = vcr_core::harness::DEFAULT_BINS, env = "VCREVAL_BINS")]
        bins: usize,
        #[command(flatten)]
        inputs: InputArgs,
    },
    /// Tagger agreement tables from the corpus raw scores.
    Agree {
        /// nominal, ordinal or interval.
        #[arg(long, default_value = "interval", env = "VCREVAL_LEVEL")]
        level: Level,
        /// tau-a or tau-b.
        #[arg(long, default_value = "tau-b", env = "VCREVAL_TAU")]
        tau: TauVariant,
        #[arg(long, env = "VCREVAL_JSON")]
        json: bool,
    },
    /// Rank models by summed human scores.
    Rank {
        /// voting-sum, mean-sum or trimmed-sum; all three when omitted.
        #[arg(long, env = "VCREVAL_VIEW")]
        view: Option<ViewKind>,
        /// Declared model order (comma-separated); corpus order by default.
        #[arg(long, env = "VCREVAL_MODELS", value_delimiter = ',')]
        models: Vec<String>,
        #[arg(long, env = "VCREVAL_JSON")]
        json: bool,
    },
    /// Run the tagging service.
    Serve {
        #[arg(long, env = "VCREVAL_BIND")]
        bind: Option<String>,
        #[arg(long, env = "VCREVAL_DATA_DIR")]
        data_dir: Option<PathBuf>,
        #[arg(long, env = "VCREVAL_TAGGERS", value_delimiter = ',')]
        taggers: Vec<String>,
        #[arg(long, env = "VCREVAL_OPEN_PHASES", value_delimiter = ',')]
        open_phases: Vec<u32>,
    },
}

pub use commands::run;
