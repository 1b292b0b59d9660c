//! Command-line front end: `train`, `score`, `inject`, `infer` and `eval`
//! over NPY feature dumps and NDJSON manifests, datasets and responses.
//!
//! Progress and errors go to stderr as one JSON object per line. Any stage
//! error exits with status 1 after an `{"event":"error",...}` line. Failed
//! backend calls during `infer` are not stage errors; they are counted in
//! the summary event and the run still exits 0.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use probe_inject::evaluation::EvalError;
use probe_inject::feature_store::{Split, StoreError};
use probe_inject::linear_head::{HeadError, HeadIoError};
use probe_inject::orchestrator::{BackendError, BackendKind, RunError};
use probe_inject::prompt_injection::{DatasetError, InjectError, Placement};
use serde_json::{json, Value};
use thiserror::Error;

pub use config::{load_config, PipelineConfig};

#[derive(Debug, Parser)]
#[command(name = "probe-inject", version, about = "Linear-probe fake detection with prompt injection")]
pub struct Cli {
    /// TOML pipeline config; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the linear head on the train/val splits.
    Train(TrainArgs),
    /// Score a trained head on one split (head-only accuracy and F1).
    Score(ScoreArgs),
    /// Inject head probabilities into a conversation dataset.
    Inject(InjectArgs),
    /// Query a chat backend for every test-split image.
    Infer(InferArgs),
    /// Score model responses against labels and reference explanations.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct Inputs {
    /// Feature matrix (.npy, one row per image).
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// NDJSON manifest mapping image ids to rows, labels and splits.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    /// Output directory for the head files.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// L2-normalise each feature vector before the head.
    #[arg(long)]
    pub l2_normalize: bool,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    /// Head directory written by `train`.
    #[arg(long)]
    pub head: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: Split,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Also write per-image probabilities as NDJSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InjectArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    #[arg(long)]
    pub head: Option<PathBuf>,
    /// Conversation dataset (NDJSON with image_id/user/assistant[/label]).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Read `--dataset` as a LLaVA-style JSON array instead of NDJSON.
    #[arg(long)]
    pub llava: bool,
    #[arg(long)]
    pub placement: Option<Placement>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    #[arg(long)]
    pub head: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub backend: Option<BackendKind>,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long, overrides_with = "no_inject")]
    pub inject: bool,
    #[arg(long, overrides_with = "inject")]
    pub no_inject: bool,
    #[arg(long)]
    pub placement: Option<Placement>,
    #[arg(long)]
    pub question: Option<String>,
    #[arg(long)]
    pub max_in_flight: Option<usize>,
    #[arg(long)]
    pub timeout_secs: Option<f64>,
    #[arg(long)]
    pub retries: Option<u32>,
    /// Decision threshold of the mock backend.
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Responses NDJSON written by `infer`.
    #[arg(long)]
    pub responses: Option<PathBuf>,
    /// Manifest holding labels and reference explanations.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Embeddings of the generated explanations, one row per response.
    #[arg(long, requires = "reference_embeddings")]
    pub candidate_embeddings: Option<PathBuf>,
    /// Embeddings of the reference explanations, one row per response.
    #[arg(long, requires = "candidate_embeddings")]
    pub reference_embeddings: Option<PathBuf>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Row label used in the printed table.
    #[arg(long)]
    pub method: Option<String>,
    /// Report JSON destination.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{what} not found: {}", path.display())]
    NotFound { what: &'static str, path: PathBuf },
    #[error("missing --{0} (not set on the command line or in the config)")]
    MissingArg(&'static str),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error(transparent)]
    HeadIo(#[from] HeadIoError),
    #[error(transparent)]
    Inject(#[from] InjectError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Stable short name for the error line.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::NotFound { .. } => "not_found",
            CliError::MissingArg(_) => "missing_argument",
            CliError::Io { .. } => "io",
            CliError::Config(_) => "config",
            CliError::Store(_) => "feature_store",
            CliError::Head(_) => "linear_head",
            CliError::HeadIo(_) => "head_io",
            CliError::Inject(InjectError::MissingPrediction(_)) => "missing_prediction",
            CliError::Inject(_) => "prompt_injection",
            CliError::Dataset(_) => "dataset",
            CliError::Backend(_) => "backend",
            CliError::Run(_) => "inference",
            CliError::Eval(_) => "evaluation",
        }
    }
}

/// NDJSON event sink.
pub struct Log<'a> {
    sink: &'a mut dyn Write,
}

impl<'a> Log<'a> {
    pub fn new(sink: &'a mut dyn Write) -> Self {
        Self { sink }
    }

    pub fn event(&mut self, name: &str, fields: Value) {
        let mut obj = json!({ "event": name });
        if let (Some(o), Value::Object(extra)) = (obj.as_object_mut(), fields) {
            o.extend(extra);
        }
        let _ = writeln!(self.sink, "{obj}");
    }
}

/// Parses `args` and runs the command. Returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = if e.use_stderr() {
                write!(stderr, "{e}")
            } else {
                write!(stdout, "{e}")
            };
            return code;
        }
    };
    let mut log = Log::new(stderr);
    match execute(cli, stdout, &mut log) {
        Ok(()) => 0,
        Err(e) => {
            log.event("error", json!({ "kind": e.kind(), "message": e.to_string() }));
            1
        }
    }
}

pub fn execute(cli: Cli, stdout: &mut dyn Write, log: &mut Log) -> Result<(), CliError> {
    let config = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Train(a) => commands::train(a, config, log),
        Command::Score(a) => commands::score(a, config, stdout, log),
        Command::Inject(a) => commands::inject(a, config, log),
        Command::Infer(a) => commands::infer(a, config, log),
        Command::Eval(a) => commands::eval(a, config, stdout, log),
    }
}
