//! `admelabel` command-line pipeline.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 bad input data,
//! 4 runtime failure.

mod commands;
mod support;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use admelabel::models::ModelKind;
use support::Failure;

#[derive(Parser, Debug)]
#[command(name = "admelabel", version, about = "ADME paragraph labeling pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Pipeline configuration file (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the config file.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Collect NDA labels and store their pharmacokinetics paragraphs.
    Ingest(IngestArgs),
    /// Label stored paragraphs from their ADME titles.
    Annotate(AnnotateArgs),
    /// Train one model on a labeled corpus.
    Train(TrainArgs),
    /// Label a corpus with a trained model.
    Predict(PredictArgs),
    /// Stratified k-fold evaluation, optionally with an unseen test set.
    Evaluate(EvaluateArgs),
    /// Layer freezing or re-initialization sweep for the encoder.
    Ablate(AblateArgs),
    /// Per-head attention similarity between two encoder checkpoints.
    AttentionDiff(AttentionDiffArgs),
    /// Macro-F1 against training-set size.
    LearningCurve(LearningCurveArgs),
    /// Masked-LM pretraining of a fresh encoder.
    Pretrain(PretrainArgs),
    /// Write the synthetic corpus.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Directory of SPL XML files.
    #[arg(long, conflicts_with_all = ["index", "endpoint"])]
    pub input: Option<PathBuf>,
    /// Local label index, one page payload per line.
    #[arg(long, conflicts_with = "endpoint", requires = "documents")]
    pub index: Option<PathBuf>,
    /// Directory holding `<set_id>.xml` files for `--index`.
    #[arg(long)]
    pub documents: Option<PathBuf>,
    /// Paged label index URL.
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub page_limit: Option<usize>,
    /// Manifest to write (JSON lines).
    #[arg(long)]
    pub out: PathBuf,
    /// Segment store; defaults to `<out stem>.segments.jsonl` beside the manifest.
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct AnnotateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone)]
pub struct EncoderInputs {
    /// Start the encoder from this checkpoint instead of pretraining.
    #[arg(long)]
    pub pretrained: Option<PathBuf>,
    /// Extra pretraining text, one paragraph per line.
    #[arg(long)]
    pub unlabeled: Option<PathBuf>,
    /// Fine-tuning epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Fine-tuning learning rate.
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Fine-tuning batch size.
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, value_parser = parse_model)]
    pub model: ModelKind,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub encoder: EncoderInputs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    /// Trained model file.
    #[arg(long)]
    pub model_file: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long, value_parser = parse_model)]
    pub model: ModelKind,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Hand-labeled paragraphs scored separately.
    #[arg(long)]
    pub unseen: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of folds; overrides the config file.
    #[arg(long)]
    pub k: Option<usize>,
    #[command(flatten)]
    pub encoder: EncoderInputs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    Freeze,
    Reinit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum AblationInit {
    TruncatedNormal,
    Uniform,
    Pretrained,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long, value_enum)]
    pub mode: AblationMode,
    /// Layer counts: `0,1,2,4` or a range `0..4` (inclusive).
    #[arg(long)]
    pub top_n: String,
    /// Freeze mode: starting weights (default pretrained). Reinit mode: scheme
    /// for the re-sampled layers (default truncated_normal).
    #[arg(long, value_enum)]
    pub init: Option<AblationInit>,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub k: Option<usize>,
    #[command(flatten)]
    pub encoder: EncoderInputs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct AttentionDiffArgs {
    #[arg(long)]
    pub before: PathBuf,
    #[arg(long)]
    pub after: PathBuf,
    /// Labeled corpus the sample texts come from.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Texts per class.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Compare word-level attentions.
    #[arg(long)]
    pub merged: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct LearningCurveArgs {
    /// Comma-separated model names.
    #[arg(long, value_delimiter = ',', value_parser = parse_model)]
    pub models: Vec<ModelKind>,
    /// Comma-separated per-class training sizes.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub holdout: Option<usize>,
    #[arg(long)]
    pub corpus: PathBuf,
    /// CSV table `size,model,f1`.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub encoder: EncoderInputs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct PretrainArgs {
    /// Labeled corpus whose texts are used (labels ignored).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Plain text, one paragraph per line.
    #[arg(long)]
    pub unlabeled: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-step loss log (JSON lines).
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Labeled corpus to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Unlabeled paragraphs, one per line.
    #[arg(long)]
    pub unlabeled_out: Option<PathBuf>,
    #[arg(long)]
    pub paragraphs: Option<usize>,
    #[arg(long)]
    pub unlabeled: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    s.parse::<ModelKind>().map_err(|_| {
        let names: Vec<&str> = ModelKind::ALL.iter().map(|k| k.as_str()).collect();
        format!("unknown model {s:?} (expected one of {})", names.join(", "))
    })
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Ingest(a) => commands::ingest(a),
        Command::Annotate(a) => commands::annotate(a),
        Command::Train(a) => commands::train(a),
        Command::Predict(a) => commands::predict(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::AttentionDiff(a) => commands::attention_diff(a),
        Command::LearningCurve(a) => commands::learning_curve(a),
        Command::Pretrain(a) => commands::pretrain(a),
        Command::Synth(a) => commands::synth(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
