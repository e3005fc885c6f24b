//! `roomlabel`: convert, ingest, build co-occurrence tables, classify rooms
//! and evaluate predictions.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 backend failure.

mod commands;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use roomlabel::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Backend(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Backend(_) => 3,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Param(_) => CliError::Usage(e.to_string()),
            Error::Score(_) | Error::RoomsFailed(_) => CliError::Backend(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "roomlabel", version, about = "Zero-shot room labelling for 3D scene graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert Matterport3D .house files into a scene file
    Convert(ConvertArgs),
    /// Preprocess a scene file and print room/object statistics
    Ingest(IngestArgs),
    /// Build a co-occurrence table from ground-truth counts or LM proxy scores
    Cooc(CoocArgs),
    /// Classify every room of a preprocessed scene
    Infer(InferArgs),
    /// Evaluate one or more prediction files
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectSpaceArg {
    Fine,
    Coarse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CoocMode {
    Gt,
    Proxy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CountArg {
    Instances,
    Presence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ArticleArg {
    Grammatical,
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Offline,
    Remote,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// Matterport3D .house file (repeatable)
    #[arg(long = "house", required = true)]
    pub houses: Vec<PathBuf>,
    /// Output scene file
    #[arg(long)]
    pub out: PathBuf,
    /// Matterport category_mapping.tsv supplying nyuClass labels
    #[arg(long)]
    pub category_map: Option<PathBuf>,
}

#[derive(Debug, Args, serde::Serialize)]
pub struct SpaceArgs {
    /// Object label space to infer over
    #[arg(long, value_enum, default_value = "fine")]
    #[serde(serialize_with = "debug_str")]
    pub object_space: ObjectSpaceArg,
    /// Spelling-fix table (misspelled TAB corrected); defaults to the built-in table
    #[arg(long)]
    pub spelling_fixes: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Raw scene file
    #[arg(long)]
    pub scene: PathBuf,
    /// Preprocessed scene output
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub space: SpaceArgs,
}

#[derive(Debug, Args, serde::Serialize)]
pub struct ScorerArgs {
    #[arg(long, value_enum, default_value = "offline")]
    #[serde(serialize_with = "debug_str")]
    pub backend: BackendArg,
    /// Seed of the offline scorer
    #[arg(long, default_value_t = roomlabel::scoring::offline::DEFAULT_SEED)]
    pub seed: u64,
    /// Offline scorer bonus table (object TAB room TAB bonus)
    #[arg(long)]
    pub bonus_table: Option<PathBuf>,
    /// Maximum concurrent scoring requests / workers
    #[arg(long, default_value_t = 4)]
    pub max_inflight: usize,
    /// Remote backend attempts per sentence
    #[arg(long, default_value_t = 5)]
    pub max_attempts: u32,
    /// Directory for the persistent score cache
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "grammatical")]
    #[serde(serialize_with = "debug_str")]
    pub article: ArticleArg,
}

#[derive(Debug, Args)]
pub struct CoocArgs {
    /// Preprocessed scene file
    #[arg(long)]
    pub graph: PathBuf,
    /// Output table
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "gt")]
    pub cooc: CoocMode,
    /// Additive smoothing constant for ground-truth counts
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value = "instances")]
    pub count: CountArg,
    #[command(flatten)]
    pub space: SpaceArgs,
    #[command(flatten)]
    pub scorer: ScorerArgs,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Preprocessed scene file
    #[arg(long)]
    pub graph: PathBuf,
    /// Co-occurrence table from `cooc`
    #[arg(long = "table")]
    pub table: PathBuf,
    /// Output predictions (JSON lines)
    #[arg(long)]
    pub out: PathBuf,
    /// Objects mentioned per query
    #[arg(long, default_value_t = roomlabel::inference::DEFAULT_K)]
    pub k: usize,
    /// Rank candidates by mean token log probability instead of the total
    #[arg(long)]
    pub length_normalize: bool,
    #[command(flatten)]
    pub space: SpaceArgs,
    #[command(flatten)]
    pub scorer: ScorerArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Prediction files from `infer`
    #[arg(required = true)]
    pub predictions: Vec<PathBuf>,
    /// Directory for reports
    #[arg(long)]
    pub out_dir: PathBuf,
}

fn debug_str<T: std::fmt::Debug, S: serde::Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format!("{v:?}").to_lowercase())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Convert(a) => commands::convert(&a),
        Command::Ingest(a) => commands::ingest(&a),
        Command::Cooc(a) => commands::cooc(&a),
        Command::Infer(a) => commands::infer(&a),
        Command::Eval(a) => commands::eval(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
