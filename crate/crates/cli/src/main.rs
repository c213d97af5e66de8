//! `xfer`: generate corpora and tasks, remap vocabularies, pretrain,
//! fine-tune and run diagnostics with reproducible CSV/JSON outputs.

mod commands;
mod manifest;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "xfer", version, about = "Masked-LM transfer testbed")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic pretraining corpus.
    GenCorpus(GenCorpus),
    /// Generate a labelled motif-detection task.
    GenTask(GenTask),
    /// Build a token mapping file.
    MakeMap(MakeMap),
    /// Apply a mapping file to a dataset or corpus.
    Remap(Remap),
    /// Masked-LM pretraining.
    Pretrain(Pretrain),
    /// Fine-tune a classifier or regressor.
    Finetune(Finetune),
    /// Representation and training-stability diagnostics.
    #[command(subcommand)]
    Diagnose(Diagnose),
    /// Summarize fine-tuning runs by task and init mode.
    Report(Report),
}

#[derive(Args, Debug)]
pub struct GenCorpus {
    /// uniform | flat | nesting
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub lines: Option<usize>,
    #[arg(long)]
    pub min_len: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub unused: Option<usize>,
    #[arg(long)]
    pub bracket_types: Option<usize>,
    #[arg(long)]
    pub close_prob: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON file with a "corpus" section.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GenTask {
    #[arg(long)]
    pub lines: Option<usize>,
    #[arg(long)]
    pub min_len: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub motif_len: Option<usize>,
    /// Comma-separated alphabet.
    #[arg(long, value_delimiter = ',')]
    pub alphabet: Option<Vec<String>>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct MakeMap {
    /// shift | random | inject
    #[arg(long)]
    pub kind: String,
    /// Source vocabulary.
    #[arg(long)]
    pub vocab: PathBuf,
    /// Target vocabulary (inject only).
    #[arg(long)]
    pub model_vocab: Option<PathBuf>,
    /// Shift offset.
    #[arg(long, default_value_t = 1)]
    pub offset: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Inject only: never target the model's unused tokens.
    #[arg(long)]
    pub avoid_unused: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct Remap {
    #[arg(long)]
    pub map: PathBuf,
    /// Vocabulary of the input (default: `<input>.vocab`).
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Vocabulary of the output (default: the input vocabulary).
    #[arg(long)]
    pub model_vocab: Option<PathBuf>,
    #[arg(long, conflicts_with = "corpus", required_unless_present = "corpus")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// classes | scalar
    #[arg(long, default_value = "classes")]
    pub labels: String,
    #[arg(long)]
    pub out: PathBuf,
}

/// Encoder shape overrides.
#[derive(Args, Debug, Default)]
pub struct ModelFlags {
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub ffn: Option<usize>,
    #[arg(long)]
    pub model_max_len: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
}

/// Optimizer and schedule overrides.
#[derive(Args, Debug, Default)]
pub struct TrainFlags {
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub log_every: Option<u64>,
    #[arg(long)]
    pub eval_every: Option<u64>,
    #[arg(long)]
    pub mask_ratio: Option<f64>,
}

#[derive(Args, Debug)]
pub struct Pretrain {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Default: `<corpus>.vocab`.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub train: TrainFlags,
    /// JSON file with "model" and "train" sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint path; the loss curve goes to `<out>.curve.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct Finetune {
    /// Whole dataset, split 90/5/5 with the run seed.
    #[arg(long, conflicts_with_all = ["train_data", "valid_data", "test_data"])]
    pub data: Option<PathBuf>,
    #[arg(long = "train", required_unless_present = "data")]
    pub train_data: Option<PathBuf>,
    #[arg(long = "valid")]
    pub valid_data: Option<PathBuf>,
    #[arg(long = "test")]
    pub test_data: Option<PathBuf>,
    /// Token vocabulary of the datasets (default: `<data>.vocab`).
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long, default_value = "classes")]
    pub labels: String,
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// scratch | checkpoint | re-emb
    #[arg(long)]
    pub init_mode: Option<String>,
    #[arg(long)]
    pub subset_fraction: Option<f64>,
    /// final | best-valid
    #[arg(long)]
    pub checkpoint_selection: Option<String>,
    #[arg(long)]
    pub reembed_positional: bool,
    /// Task name used by `report` (default: dataset file stem).
    #[arg(long)]
    pub task: Option<String>,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Checkpoint plus dataset shared by the diagnostics.
#[derive(Args, Debug)]
pub struct DiagData {
    #[arg(long)]
    pub data: PathBuf,
    /// Default: `<data>.vocab`.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long, default_value = "classes")]
    pub labels: String,
}

#[derive(Subcommand, Debug)]
pub enum Diagnose {
    /// PWCCA similarity per layer, both directions.
    Pwcca {
        #[arg(long)]
        ckpt_a: PathBuf,
        #[arg(long)]
        ckpt_b: PathBuf,
        #[command(flatten)]
        data: DiagData,
        /// Single layer (default: every layer).
        #[arg(long)]
        layer: Option<usize>,
        #[arg(long, default_value_t = 500)]
        n_points: usize,
        #[arg(long, default_value_t = 0.99)]
        variance_kept: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Hungarian-matched attention-map distance per layer.
    Attention {
        #[arg(long)]
        ckpt_a: PathBuf,
        #[arg(long)]
        ckpt_b: PathBuf,
        #[command(flatten)]
        data: DiagData,
        #[arg(long, default_value_t = 100)]
        n_inputs: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Singular values of the output/input-embedding Jacobian.
    Isometry {
        #[arg(long)]
        ckpt: PathBuf,
        #[command(flatten)]
        data: DiagData,
        /// Dataset example to differentiate.
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pairwise cosine similarity of per-example gradients.
    Confusion {
        #[arg(long)]
        ckpt: PathBuf,
        #[command(flatten)]
        data: DiagData,
        #[arg(long, default_value_t = 100)]
        pairs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Output distance under Gaussian parameter noise.
    Perturb {
        #[arg(long)]
        ckpt: PathBuf,
        #[command(flatten)]
        data: DiagData,
        #[arg(long, value_delimiter = ',', default_values_t = [1e-2, 1e-4, 1e-6, 1e-8])]
        sigmas: Vec<f64>,
        #[arg(long, default_value_t = 20)]
        draws: usize,
        /// Use only the first N examples.
        #[arg(long, default_value_t = 64)]
        n_examples: usize,
        /// last-hidden-cls | logits
        #[arg(long, default_value = "last-hidden-cls")]
        site: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
pub struct Report {
    /// Directories searched recursively for finished fine-tuning runs.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
