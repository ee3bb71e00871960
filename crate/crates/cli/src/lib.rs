//! `adsiam` command line: synthetic data, offline training, tracking,
//! evaluation and manifest replay.

mod commands;
mod manifest;

use std::ffi::OsString;
use std::fmt;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

pub use commands::{load_corpus, read_predictions};
pub use manifest::{RunManifest, MANIFEST_FILE};

/// Failure with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    code: u8,
    source: anyhow::Error,
}

impl CliError {
    pub const USAGE: u8 = 2;
    pub const RUNTIME: u8 = 1;

    pub fn usage(e: impl Into<anyhow::Error>) -> Self {
        Self { code: Self::USAGE, source: e.into() }
    }

    pub fn runtime(e: impl Into<anyhow::Error>) -> Self {
        Self { code: Self::RUNTIME, source: e.into() }
    }

    pub fn code(&self) -> u8 {
        self.code
    }

    pub fn context(self, msg: impl fmt::Display) -> Self {
        Self { code: self.code, source: self.source.context(msg.to_string()) }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.source)
    }
}

impl std::error::Error for CliError {}

impl From<adsiam::Error> for CliError {
    fn from(e: adsiam::Error) -> Self {
        use adsiam::Error as E;
        match e {
            E::Config(_) | E::Spec(_) | E::Checkpoint(_) | E::Parse(_) | E::LengthMismatch(..) => Self::usage(e),
            _ => Self::runtime(e),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        Self::runtime(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::runtime(e)
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "adsiam", version, about = "Adaptive Siamese tracker with motion estimation and weighting heads")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic sequences from a spec file or a built-in suite.
    Synth(SynthArgs),
    /// Train the matching network and the motion feature stage offline.
    Train(TrainArgs),
    /// Track one sequence from its first ground-truth box.
    Track(TrackArgs),
    /// Score prediction CSVs against ground truth.
    Eval(EvalArgs),
    /// Track every sequence of a built-in suite and report one-pass metrics.
    Ope(OpeArgs),
    /// Rerun the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// TOML sequence spec.
    #[arg(long, conflicts_with = "suite", required_unless_present = "suite")]
    pub spec: Option<PathBuf>,
    /// Built-in suite: train, smooth, jump, occlusion or distractor.
    #[arg(long)]
    pub suite: Option<String>,
    /// Number of suite members (default: the suite's size).
    #[arg(long, requires = "suite")]
    pub count: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Generation seed for --spec. Suites use their fixed seeds.
    #[arg(long, default_value_t = 0, conflicts_with = "suite")]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// A sequence directory or a directory of sequence directories.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory holding the checkpoints written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub sequence: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// full, no-men, no-wcnn or no-buffer.
    #[arg(long, default_value = "full")]
    pub ablate: String,
    /// Write frames with predicted (green) and ground-truth (pink) boxes.
    #[arg(long)]
    pub overlay: bool,
    /// Write per-candidate scores and motion score maps.
    #[arg(long)]
    pub scores: bool,
    /// Candidate-scoring workers; overrides the config.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Track CSVs, or directories containing track.csv.
    #[arg(long, num_args = 1..)]
    pub pred: Vec<PathBuf>,
    /// Ground-truth files or sequence directories, in the same order.
    #[arg(long, num_args = 1..)]
    pub gt: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct OpeArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub suite: String,
    #[arg(long)]
    pub count: Option<usize>,
    /// Comma-separated variants.
    #[arg(long, default_value = "full")]
    pub ablate: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

/// Parses `args` (program name first) and runs the subcommand.
pub fn run<I, T>(args: I) -> CliResult<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<String> = args.into_iter().map(|a| a.into().to_string_lossy().into_owned()).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(CliError::usage(anyhow::anyhow!("{e}"))),
    };
    let tail = argv.get(1..).unwrap_or_default().to_vec();
    match cli.command {
        Command::Synth(a) => commands::synth(&a, &tail),
        Command::Train(a) => commands::train(&a, &tail),
        Command::Track(a) => commands::track(&a, &tail),
        Command::Eval(a) => commands::eval(&a, &tail),
        Command::Ope(a) => commands::ope(&a, &tail),
        Command::Replay(a) => {
            let m = RunManifest::read(&a.manifest).map_err(CliError::usage)?;
            if m.argv.first().map(String::as_str) == Some("replay") {
                return Err(CliError::usage(anyhow::anyhow!("refusing to replay a replay manifest")));
            }
            run(std::iter::once("adsiam".to_string()).chain(m.argv))
        }
    }
}
