//! `swift`: synthesize data, train, evaluate and diagnose from the shell.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use swift_core::train::{HeadInit, Method};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "swift", version, about = "Semi-supervised few-shot training over embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic bundle.
    Synth(SynthArgs),
    /// Stage-1 linear probe.
    Probe(ProbeArgs),
    /// Run any subset of the three training stages.
    Train(TrainArgs),
    /// Test accuracy of a checkpoint.
    Eval(EvalArgs),
    /// Confidence histogram, softmax flatness and a confidence-temperature sweep.
    Diagnose(DiagnoseArgs),
}

/// Exactly one data source.
#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct DataSource {
    /// Bundle directory.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Synthetic spec (JSON); the bundle is generated in memory.
    #[arg(long)]
    synth: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// JSON file of training settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one setting, e.g. `--set t_conf=0.01`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Generator parameters (JSON); defaults to the reference task.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum InitArg {
    Text,
    Random,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Fixmatch,
    Debiaspl,
}

#[derive(Debug, Args)]
struct ProbeArgs {
    #[command(flatten)]
    source: DataSource,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_enum)]
    init: Option<InitArg>,
    /// Initial (or, with `--fixed-t`, constant) loss temperature.
    #[arg(long)]
    t_loss: Option<f64>,
    /// Keep the loss temperature fixed.
    #[arg(long)]
    fixed_t: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    source: DataSource,
    #[command(flatten)]
    config: ConfigArgs,
    /// Comma-separated stage list, e.g. `1,2,3`.
    #[arg(long, value_delimiter = ',')]
    stages: Option<Vec<u8>>,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// Leave retrieved data out of stage 2.
    #[arg(long)]
    no_ra: bool,
    #[arg(long, value_enum)]
    init: Option<InitArg>,
    /// Checkpoint directory to start from instead of the initial head.
    #[arg(long)]
    init_from: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    source: DataSource,
}

#[derive(Debug, Args)]
struct DiagnoseArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    source: DataSource,
    /// Confidence temperatures to sweep.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0.001,0.005,0.01,0.05,0.1,0.5,1.0"
    )]
    grid: Vec<f64>,
    #[arg(long, default_value_t = 0.8)]
    sigma: f64,
    /// Temperature for the histogram and flatness statistics.
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long, default_value_t = 20)]
    bins: usize,
    #[arg(long)]
    out: PathBuf,
}

impl From<InitArg> for HeadInit {
    fn from(v: InitArg) -> Self {
        match v {
            InitArg::Text => HeadInit::Text,
            InitArg::Random => HeadInit::Random,
        }
    }
}

impl From<MethodArg> for Method {
    fn from(v: MethodArg) -> Self {
        match v {
            MethodArg::Fixmatch => Method::FixMatch,
            MethodArg::Debiaspl => Method::DebiasPl,
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("SWIFT_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::usage(format!("SWIFT_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::usage(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Probe(a) => commands::probe(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Diagnose(a) => commands::diagnose(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", err.to_json());
            ExitCode::from(err.code as u8)
        }
    }
}
