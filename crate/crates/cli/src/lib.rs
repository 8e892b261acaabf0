//! The `noisyre` command line: training, evaluation, prediction, synthetic
//! corpora and self-checks.
//!
//! Exit codes: 0 success, 1 failed checks or other errors, 2 unusable input
//! (missing file, invalid setting), 3 checkpoint problems (none found,
//! relation count mismatch).

pub mod commands;
pub mod config;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{cmd_eval, cmd_grad_check, cmd_predict, cmd_selfcheck, cmd_synth, cmd_train};
pub use config::RunConfig;

/// An error carrying the process exit code it should produce.
#[derive(Debug)]
pub struct ExitError {
    pub code: u8,
    pub message: String,
}

impl ExitError {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl fmt::Display for ExitError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for ExitError {}

/// Exit code for any error raised by a command.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.downcast_ref::<ExitError>() {
        return e.code;
    }
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<noisyre::Error>() {
            use noisyre::Error as E;
            return match e {
                E::Io { .. }
                | E::Json { .. }
                | E::InvalidConfig(_)
                | E::UnknownRelation { .. }
                | E::Parse { .. }
                | E::EmbeddingDim { .. } => 2,
                E::RelationCountMismatch { .. } | E::Checkpoint(_) => 3,
                _ => 1,
            };
        }
    }
    // config-file and flag errors raised by this crate
    2
}

#[derive(Debug, Parser)]
#[command(
    name = "noisyre",
    version,
    about = "Distant-supervision relation extraction with a noise converter"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

// parsed once per process, so the size spread between variants is harmless
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write checkpoints, a log and the resolved config.
    Train(TrainArgs),
    /// Score a test corpus and write metrics JSON and a PR curve CSV.
    Eval(EvalArgs),
    /// Write one bag-level prediction per entity pair.
    Predict(PredictArgs),
    /// Generate a synthetic corpus with planted sentence labels.
    Synth(SynthArgs),
    /// Run the randomized numerical checks.
    Selfcheck(SelfcheckArgs),
    /// Compare analytic and finite-difference gradients on a tiny model.
    GradCheck(GradCheckArgs),
}

/// Options shared by the configurable commands.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// `key = value` file applied before flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for prediction; results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output directory (overrides NOISYRE_RUN_DIR).
    #[arg(long)]
    pub run_dir: Option<String>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub corpus: Option<String>,
    #[arg(long)]
    pub schema: Option<String>,
    #[arg(long)]
    pub validation: Option<String>,
    #[arg(long)]
    pub validation_fraction: Option<f64>,
    /// Pre-trained word vectors, one `token v1 .. vd` line each.
    #[arg(long)]
    pub embeddings: Option<String>,
    #[arg(long)]
    pub min_count: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub pretrain_epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub checkpoint_interval: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub init_ratio: Option<f64>,
    #[arg(long)]
    pub reinit_transition: Option<bool>,
    #[arg(long)]
    pub dropout_rate: Option<f64>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub filters: Option<usize>,
    #[arg(long)]
    pub word_dim: Option<usize>,
    #[arg(long)]
    pub position_dim: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub position_clip: Option<usize>,
    /// Any other config key, as `key=value`; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

/// Where the model(s) come from.
#[derive(Debug, Clone, Default, Args)]
pub struct CheckpointArgs {
    /// Checkpoint directory; repeat to ensemble several.
    #[arg(long = "checkpoint")]
    pub checkpoints: Vec<PathBuf>,
    /// Training run directory; its best checkpoint is used unless
    /// `--ensemble-last` is given.
    #[arg(long)]
    pub run: Option<PathBuf>,
    /// Average the last N checkpoints of `--run`.
    #[arg(long)]
    pub ensemble_last: Option<usize>,
    /// `cond_opt` or `avg_weighted`.
    #[arg(long, default_value = "cond_opt")]
    pub selector: String,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Clone, Default, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub model: CheckpointArgs,
    /// Test corpus JSONL.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Relation schema; defaults to the checkpoint's own.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Gold triples JSONL (`{"head":..,"tail":..,"relation":..}`); defaults
    /// to the positive labels of the test corpus.
    #[arg(long)]
    pub gold: Option<PathBuf>,
    /// Output directory for `metrics.json` and `pr_curve.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Default, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub model: CheckpointArgs,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Also list every relation some sentence predicts with at least this
    /// probability.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Output JSONL file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Fraction of sentences in positive bags that express the relation.
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub bags: Option<usize>,
    /// Relation count including NA.
    #[arg(long)]
    pub relations: Option<usize>,
    #[arg(long)]
    pub na_fraction: Option<f64>,
    #[arg(long)]
    pub typed_na_fraction: Option<f64>,
    #[arg(long)]
    pub min_sentences: Option<usize>,
    #[arg(long)]
    pub max_sentences: Option<usize>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub entity_pool: Option<usize>,
    /// Output directory for `corpus.jsonl` and `schema.json`; defaults to
    /// the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SelfcheckArgs {
    /// Random draws per property.
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct GradCheckArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(&a).map(|_| ()),
        Command::Eval(a) => cmd_eval(&a).map(|_| ()),
        Command::Predict(a) => cmd_predict(&a),
        Command::Synth(a) => cmd_synth(&a).map(|_| ()),
        Command::Selfcheck(a) => cmd_selfcheck(&a),
        Command::GradCheck(a) => cmd_grad_check(&a),
    }
}
