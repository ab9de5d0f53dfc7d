//! `dobs` command-line tool.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::ConfigFile;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config keys or parameter values; exit status 2.
    Usage(String),
    /// Failure while reading data or computing; exit status 1.
    Run(dobs::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Run(e) => write!(f, "{e}"),
        }
    }
}

impl From<dobs::Error> for CliError {
    fn from(e: dobs::Error) -> Self {
        match e.root() {
            dobs::Error::InvalidParameter(_) => CliError::Usage(e.to_string()),
            _ => CliError::Run(e),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "dobs", version, about = "Diffusion-maps embedding and contracting observers for time series")]
pub struct Cli {
    /// Flat key-value config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Only print errors.
    #[arg(long, short, global = true, conflicts_with = "verbose")]
    pub quiet: bool,
    /// More logging; repeat for debug output.
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate a latent trajectory and its measurements.
    Simulate(SimulateArgs),
    /// Turn measurements or audio into per-frame feature vectors.
    Featurize(FeaturizeArgs),
    /// Build the diffusion-maps model of a feature series.
    Embed(EmbedArgs),
    /// Refit the lift and store observer settings in a model file.
    FitLift(FitLiftArgs),
    /// Run the observer over a feature series.
    Observe(ObserveArgs),
    /// Continue coordinates onto new frames.
    Extend(ExtendArgs),
    /// Run a study and write CSV, JSON and SVG reports.
    Experiment(ExperimentArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Sphere,
    Circle,
    MusicSynth,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub dt: Option<f64>,
    /// Inverse temperature (circle).
    #[arg(long)]
    pub beta: Option<f64>,
    /// Drift rate (sphere).
    #[arg(long)]
    pub c: Option<f64>,
    /// Noise scale (sphere).
    #[arg(long)]
    pub b: Option<f64>,
    /// Poisson background rate of the sphere sensors.
    #[arg(long)]
    pub noise_rate: Option<f64>,
    /// Mean-reversion rate of the pitch (music-synth).
    #[arg(long)]
    pub k: Option<f64>,
    /// Pitch noise in semitones per sqrt(second) (music-synth).
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub sample_rate: Option<f64>,
    #[arg(long)]
    pub base_hz: Option<f64>,
    /// Latent trajectory output.
    #[arg(short, long)]
    pub output: PathBuf,
    /// Measurement series output (sphere, circle).
    #[arg(long)]
    pub observations: Option<PathBuf>,
    /// WAV output (music-synth).
    #[arg(long)]
    pub audio: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FeatureMode {
    Histogram,
    Stft,
    Raw,
}

#[derive(Args, Debug)]
pub struct FeaturizeArgs {
    /// Measurement CSV/DOBS1 table or a WAV file.
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Option<FeatureMode>,
    #[arg(long)]
    pub frame_len: Option<usize>,
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long)]
    pub frame_ms: Option<f64>,
    #[arg(long)]
    pub hop_ms: Option<f64>,
    #[arg(long, value_enum)]
    pub window: Option<WindowArg>,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum WindowArg {
    Rectangular,
    Hann,
}

#[derive(Args, Debug)]
pub struct EmbedArgs {
    #[arg(short, long)]
    pub features: PathBuf,
    #[arg(long)]
    pub epsilon_factor: Option<f64>,
    #[arg(long)]
    pub eig_count: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// `gap` or a fixed number of coordinates.
    #[arg(long)]
    pub dims: Option<String>,
    #[arg(long)]
    pub covariance_window: Option<usize>,
    /// `relative:<tau>` or `fixed:<d>`.
    #[arg(long)]
    pub rank_policy: Option<String>,
    /// Model file to write.
    #[arg(short, long)]
    pub output: PathBuf,
    /// Also write the embedding coordinates as CSV.
    #[arg(long)]
    pub coords: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum WeightingArg {
    Uniform,
    Density,
}

#[derive(Args, Debug)]
pub struct FitLiftArgs {
    #[arg(short, long)]
    pub model: PathBuf,
    #[arg(long, value_enum)]
    pub weighting: Option<WeightingArg>,
    /// Number of coordinates to lift (defaults to the model dimension).
    #[arg(long)]
    pub coords: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub dt_eff: Option<f64>,
    /// Defaults to rewriting the input model.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    Zero,
    First,
}

#[derive(Args, Debug)]
pub struct ObserveArgs {
    #[arg(short, long)]
    pub model: PathBuf,
    /// Feature CSV/DOBS1 table, or WAV when the model was trained on STFT frames.
    #[arg(short, long)]
    pub features: PathBuf,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub dt_eff: Option<f64>,
    #[arg(long, value_enum)]
    pub init: Option<InitArg>,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ExtendMethod {
    Observer,
    Nystrom,
}

#[derive(Args, Debug)]
pub struct ExtendArgs {
    #[arg(short, long)]
    pub model: PathBuf,
    #[arg(short, long)]
    pub features: PathBuf,
    /// Trajectory whose last row is the state to continue from (observer).
    #[arg(long)]
    pub from: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub method: Option<ExtendMethod>,
    #[arg(long)]
    pub covariance_window: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub dt_eff: Option<f64>,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ExperimentKind {
    Sphere,
    Eigs,
    Extend,
}

#[derive(Args, Debug)]
pub struct ExperimentArgs {
    #[arg(value_enum)]
    pub kind: ExperimentKind,
    /// Directory for the report files.
    #[arg(short, long)]
    pub out_dir: Option<PathBuf>,
    /// Run seeds `0..n` instead of the configured list.
    #[arg(long)]
    pub seeds: Option<u64>,
    #[arg(long)]
    pub frames: Option<usize>,
}

fn init_logging(cli: &Cli) {
    let level = if cli.quiet {
        log::LevelFilter::Error
    } else {
        match cli.verbose {
            0 => log::LevelFilter::Warn,
            1 => log::LevelFilter::Info,
            _ => log::LevelFilter::Debug,
        }
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    if let Some(n) = cli.threads.or(file.threads) {
        if n == 0 {
            return Err(CliError::Usage("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Simulate(a) => commands::simulate(a, &file),
        Command::Featurize(a) => commands::featurize(a, &file),
        Command::Embed(a) => commands::embed(a, &file),
        Command::FitLift(a) => commands::fit_lift(a, &file),
        Command::Observe(a) => commands::observe(a, &file),
        Command::Extend(a) => commands::extend(a, &file),
        Command::Experiment(a) => commands::experiment(a, &file, cli.quiet),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(&cli);
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
