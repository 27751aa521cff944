//! `psm`: dataset generation, parallel block training, likelihoods, sampling,
//! density grids and run comparison.
//!
//! Exit codes: 0 success, 1 validation error, 2 runtime or numeric failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use psm::flow::Method;
use psm::train::TrainMode;

#[derive(Debug, Parser)]
#[command(name = "psm", version, about = "Parallel score matching on 2D data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a synthetic 2D dataset.
    MakeData(MakeDataArgs),
    /// Train every block of a partition.
    Train(TrainArgs),
    /// Mean negative log-likelihood of a dataset under a trained model.
    Nll(NllArgs),
    /// Generate samples from a trained model.
    Sample(SampleArgs),
    /// Density of a trained model on a regular grid.
    Grid(GridArgs),
    /// Table of NLL and wall time for several runs.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DataKind {
    Gaussian,
    Mixture,
    Ring,
    Checkerboard,
    Moons,
    Rings,
    Glyph,
}

#[derive(Debug, Args)]
struct MakeDataArgs {
    #[arg(long, value_enum)]
    kind: DataKind,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Gaussian mean `x,y`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    mean: Option<Vec<f64>>,
    /// Gaussian or ring-component variance.
    #[arg(long)]
    var: Option<f64>,
    /// Mixture weights.
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    /// Mixture means `x,y;x,y;...`.
    #[arg(long, allow_hyphen_values = true)]
    means: Option<String>,
    /// Mixture variances.
    #[arg(long, value_delimiter = ',')]
    vars: Option<Vec<f64>>,
    /// Number of ring-mixture components.
    #[arg(long)]
    components: Option<usize>,
    /// Ring-mixture radius.
    #[arg(long)]
    radius: Option<f64>,
    /// Checkerboard cells per side.
    #[arg(long)]
    cells: Option<usize>,
    /// Checkerboard half-width.
    #[arg(long)]
    scale: Option<f64>,
    /// Moons or rings jitter.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    radii: Option<Vec<f64>>,
    /// Glyph mask in plain PGM (dark pixels are active).
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Glyph bounds `xmin,xmax,ymin,ymax`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    bounds: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Run configuration (TOML); flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    label: Option<String>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Defaults to `PSM_WORKERS`, then 1.
    #[arg(long)]
    workers: Option<usize>,
    /// Schedule slope `c` in `b(t) = c·t`.
    #[arg(long)]
    c: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    boundaries: Option<Vec<f64>>,
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    updates_per_block: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    t_floor: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Sa,
    Tpsm,
    Dpsm,
}

impl From<ModeArg> for TrainMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Sa => TrainMode::Sa,
            ModeArg::Tpsm => TrainMode::Tpsm,
            ModeArg::Dpsm => TrainMode::Dpsm,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Euler,
    Rk4,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Euler => Method::Euler,
            MethodArg::Rk4 => Method::Rk4,
        }
    }
}

#[derive(Debug, Args)]
struct IntegrationArgs {
    #[arg(long, value_enum, default_value_t = MethodArg::Rk4)]
    method: MethodArg,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
}

#[derive(Debug, Args)]
struct NllArgs {
    /// Run directory or manifest file.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    integration: IntegrationArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Via {
    Ode,
    Sde,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    n: usize,
    #[arg(long, value_enum, default_value_t = Via::Ode)]
    via: Via,
    #[command(flatten)]
    integration: IntegrationArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GridArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// `xmin,xmax,ymin,ymax`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    bounds: Vec<f64>,
    /// Points per axis.
    #[arg(long, default_value_t = 100)]
    res: usize,
    #[command(flatten)]
    integration: IntegrationArgs,
    /// Evaluate cells on this many threads.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Run directories or manifest files.
    #[arg(long, num_args = 1.., required = true)]
    manifests: Vec<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    integration: IntegrationArgs,
    /// Write the table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A validation failure raised by the CLI itself.
pub(crate) fn invalid(field: &str, reason: impl Into<String>) -> anyhow::Error {
    psm::Error::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
    .into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<psm::Error>() {
            return if e.is_validation() { 1 } else { 2 };
        }
        if cause.downcast_ref::<toml::de::Error>().is_some() {
            return 1;
        }
    }
    2
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::MakeData(a) => commands::make_data(a),
        Command::Train(a) => commands::train(a),
        Command::Nll(a) => commands::nll(a),
        Command::Sample(a) => commands::sample(a),
        Command::Grid(a) => commands::grid(a),
        Command::Compare(a) => commands::compare(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
