//! `fusenet` command-line tool.
//!
//! Exit codes: 0 success, 1 verification or accuracy failure (including a
//! diverged training run), 2 usage or I/O error.

mod commands;
mod manifest;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use fusenet::Head;

pub use manifest::MANIFEST_FILE;

#[derive(Debug, Parser)]
#[command(name = "fusenet", version, about = "Late-fusion CNN for human activity recognition")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a raw corpus into normalized, windowed split caches.
    Prepare(PrepareArgs),
    /// Train one network on a prepared dataset.
    Train(TrainArgs),
    /// Evaluate one checkpoint, or the probability-averaging ensemble of several.
    Eval(EvalArgs),
    /// Compare analytic gradients of a toy network against finite differences.
    Gradcheck(GradcheckArgs),
    /// Re-run the command recorded in a run manifest.
    Replay(ReplayArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DatasetKind {
    Ucl,
    Pamap2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AccArg {
    Total,
    Body,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Test,
    Validation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StopArg {
    TrainAccuracy,
    ValidationAccuracy,
}

fn value_name<T: ValueEnum>(v: &T) -> String {
    v.to_possible_value().expect("no skipped variants").get_name().to_string()
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[arg(long, value_enum)]
    pub dataset: DatasetKind,
    /// Corpus root as extracted from the published archive.
    #[arg(long)]
    pub root: PathBuf,
    /// Output directory; must not exist or be empty.
    #[arg(long)]
    pub out: PathBuf,
    /// Acceleration signal for the smartphone corpus.
    #[arg(long, value_enum, default_value = "total")]
    pub acc: AccArg,
}

impl PrepareArgs {
    fn argv(&self) -> Vec<String> {
        vec![
            "--dataset".into(),
            value_name(&self.dataset),
            "--root".into(),
            self.root.display().to_string(),
            "--out".into(),
            self.out.display().to_string(),
            "--acc".into(),
            value_name(&self.acc),
        ]
    }
}

fn parse_head(s: &str) -> Result<Head, String> {
    s.parse().map_err(|e: fusenet::Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory written by `prepare`.
    #[arg(long, env = "FUSENET_DATA")]
    pub data: PathBuf,
    /// Parent of the per-run output directory.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Convolution layer (1-3) that fuses sensor rows.
    #[arg(long, default_value_t = 3)]
    pub fusion_layer: usize,
    /// `gap` or `dense:SIZE`.
    #[arg(long, default_value = "gap", value_parser = parse_head)]
    pub head: Head,
    #[arg(long, default_value_t = 0.4)]
    pub dropout: f64,
    #[arg(long, default_value_t = 2000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 100)]
    pub patience: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    /// Float width of parameters and activations: 32 or 64.
    #[arg(long, default_value_t = 32)]
    pub precision: u32,
    #[arg(long, default_value_t = 1.0)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.95)]
    pub rho: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub epsilon: f64,
    #[arg(long, value_enum, default_value = "train-accuracy")]
    pub stop_monitor: StopArg,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    pub quiet: bool,
}

impl TrainArgs {
    fn argv(&self) -> Vec<String> {
        let mut v: Vec<String> = [
            ("--data", self.data.display().to_string()),
            ("--out", self.out.display().to_string()),
            ("--seed", self.seed.to_string()),
            ("--fusion-layer", self.fusion_layer.to_string()),
            ("--head", self.head.to_string()),
            ("--dropout", format!("{:?}", self.dropout)),
            ("--epochs", self.epochs.to_string()),
            ("--patience", self.patience.to_string()),
            ("--batch-size", self.batch_size.to_string()),
            ("--precision", self.precision.to_string()),
            ("--lr", format!("{:?}", self.lr)),
            ("--rho", format!("{:?}", self.rho)),
            ("--epsilon", format!("{:?}", self.epsilon)),
            ("--stop-monitor", value_name(&self.stop_monitor)),
        ]
        .into_iter()
        .flat_map(|(k, v)| [k.to_string(), v])
        .collect();
        if self.quiet {
            v.push("--quiet".into());
        }
        v
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// One checkpoint, or several for an ensemble.
    #[arg(long = "ckpt", required = true, num_args = 1..)]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long, env = "FUSENET_DATA")]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Parent of a per-run directory receiving the metric files.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads across checkpoints.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Exit with status 1 when accuracy falls below this value.
    #[arg(long)]
    pub min_accuracy: Option<f64>,
}

impl EvalArgs {
    fn argv(&self) -> Vec<String> {
        let mut v = vec!["--ckpt".to_string()];
        v.extend(self.checkpoints.iter().map(|p| p.display().to_string()));
        v.extend(["--data".into(), self.data.display().to_string(), "--split".into(), value_name(&self.split)]);
        if let Some(out) = &self.out {
            v.extend(["--out".into(), out.display().to_string()]);
        }
        v.extend(["--jobs".into(), self.jobs.to_string()]);
        if let Some(m) = self.min_accuracy {
            v.extend(["--min-accuracy".into(), format!("{m:?}")]);
        }
        v
    }
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Largest acceptable relative error per parameter block.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Batch size of the check, 1 to 4.
    #[arg(long, default_value_t = 4)]
    pub samples: usize,
    /// Use an all-zero input batch.
    #[arg(long)]
    pub zero_input: bool,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Replace the recorded `--out` value.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, missing files, incompatible inputs: exit 2.
    Usage(String),
    /// The command ran but a check failed: exit 1.
    Failure(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Usage(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failure(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Failure(m) => f.write_str(m),
        }
    }
}

impl From<fusenet::Error> for CliError {
    fn from(e: fusenet::Error) -> Self {
        match e {
            fusenet::Error::NonFiniteLoss { .. } | fusenet::Error::Numeric(_) => CliError::Failure(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

/// Parses `args` (program name first) and runs the command; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Prepare(a) => commands::prepare(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::Replay(a) => replay(&a),
    }
}

fn replay(args: &ReplayArgs) -> Result<(), CliError> {
    let (command, mut argv) = manifest::read_invocation(&args.manifest)?;
    if command == "replay" {
        return Err(CliError::Usage("a replay manifest cannot be replayed".into()));
    }
    if let Some(out) = &args.out {
        match argv.iter().position(|a| a == "--out") {
            Some(i) if i + 1 < argv.len() => argv[i + 1] = out.display().to_string(),
            _ => argv.extend(["--out".into(), out.display().to_string()]),
        }
    }
    let full = std::iter::once("fusenet".to_string()).chain(std::iter::once(command)).chain(argv);
    let cli = Cli::try_parse_from(full).map_err(|e| CliError::Usage(format!("manifest arguments no longer parse: {e}")))?;
    dispatch(cli.command)
}
