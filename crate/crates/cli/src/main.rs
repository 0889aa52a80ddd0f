mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use saner_core::corpus::SchemeKind;
use saner_core::train_eval::Mode;

#[derive(Debug, Parser)]
#[command(
    name = "saner",
    version,
    about = "NER with attentive similar-word augmentation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sentence, entity and unseen-entity counts.
    Stats(StatsArgs),
    /// Build the similar-word cache for a vocabulary.
    BuildNeighbors(NeighborArgs),
    /// Train a model and evaluate its best epoch.
    Train(TrainArgs),
    /// Score a checkpoint on one split.
    Evaluate(RunArgs),
    /// Tag one split with a checkpoint.
    Predict(RunArgs),
    /// Dump attention weights and gate activations.
    Inspect(InspectArgs),
    /// Write the seeded synthetic corpus and a config to train on it.
    GenSynthetic(SynthArgs),
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub train: PathBuf,
    /// Splits counted against the training entities.
    #[arg(long = "eval")]
    pub eval: Vec<PathBuf>,
    #[arg(long, default_value = "BIO")]
    pub scheme: SchemeKind,
    #[arg(long, default_value_t = 1)]
    pub column: usize,
    /// Rewrite malformed tag sequences instead of failing.
    #[arg(long)]
    pub repair: bool,
    /// Write JSON here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct NeighborArgs {
    #[arg(long)]
    pub emb: PathBuf,
    /// CoNLL files whose tokens are queried.
    #[arg(long = "vocab-from", required = true)]
    pub vocab_from: Vec<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub m: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// Command-line overrides for the `[model]` section.
#[derive(Debug, Args, Default)]
pub struct Overrides {
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub constrain_decode: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Run config supplying data, embeddings and neighbors.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub constrain_decode: bool,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Only the first N sentences.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value = "BIO")]
    pub scheme: SchemeKind,
}

/// A failed command, mapped to its exit code.
#[derive(Debug)]
pub enum Failure {
    Missing(PathBuf),
    Config(String),
    Divergence(String),
    Other(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Missing(_) => 2,
            Failure::Config(_) => 3,
            Failure::Divergence(_) => 4,
            Failure::Other(_) => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Missing(p) => write!(f, "missing file: {}", p.display()),
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Divergence(m) | Failure::Other(m) => f.write_str(m),
        }
    }
}

impl From<saner_core::Error> for Failure {
    fn from(e: saner_core::Error) -> Failure {
        use saner_core::Error as E;
        match e {
            E::Config(m) => Failure::Config(m),
            E::UnsupportedMode(m) => Failure::Config(format!("unsupported mode: {m}")),
            E::Divergence { .. } => Failure::Divergence(e.to_string()),
            other => Failure::Other(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Failure {
        Failure::Other(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Failure {
        Failure::Other(e.to_string())
    }
}

pub fn require(path: &Path) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Missing(path.to_path_buf()))
    }
}

pub fn read_text(path: &Path) -> Result<String, Failure> {
    require(path)?;
    std::fs::read_to_string(path).map_err(|e| Failure::Other(format!("{}: {e}", path.display())))
}

fn init_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("SANER_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Failure::Config(format!(
            "SANER_THREADS must be a positive integer, got {raw:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Other(e.to_string()))
}

fn run(cli: Cli) -> Result<(), Failure> {
    init_threads()?;
    match cli.command {
        Command::Stats(a) => commands::stats(&a),
        Command::BuildNeighbors(a) => commands::build_neighbors(&a),
        Command::Train(a) => commands::train(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::Inspect(a) => commands::inspect(&a),
        Command::GenSynthetic(a) => commands::gen_synthetic(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage {
                ExitCode::from(3)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.to_string().lines().next().unwrap_or(""));
            ExitCode::from(f.code())
        }
    }
}
