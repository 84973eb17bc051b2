mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use stereo_completion::Error;

#[derive(Debug, Parser)]
#[command(name = "stcomp", version, about = "Stereo-aided LiDAR depth completion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Densify a sparse LiDAR depth map with the help of a stereo pair.
    Complete(CompleteArgs),
    /// Search the LiDAR-to-camera extrinsics that best explain the stereo pair.
    Calibrate(CalibrateArgs),
    /// Render a synthetic stereo scene with ground truth and LiDAR points.
    Synth(SynthArgs),
    /// Compare an inverse depth map with ground truth.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// TOML configuration; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Focal length [px].
    #[arg(long)]
    fx: Option<f64>,
    /// Stereo baseline [m].
    #[arg(long)]
    baseline: Option<f64>,
    /// Worker threads.
    #[arg(long, env = "STCOMP_WORKERS")]
    workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("lidar").required(true).args(["sparse", "points"]))]
struct CompleteArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    left: PathBuf,
    #[arg(long)]
    right: PathBuf,
    /// Sparse inverse depth (`.pfm`) or 16-bit metric depth (`.png`).
    #[arg(long)]
    sparse: Option<PathBuf>,
    /// LiDAR points (`.ply`), projected with the configured extrinsics.
    #[arg(long)]
    points: Option<PathBuf>,
    /// Final depth map (`.pfm` or `.png`).
    #[arg(long)]
    output: PathBuf,
    /// Depth map before smoothing.
    #[arg(long)]
    ssm_output: Option<PathBuf>,
    /// Source pixel of every selected value, as CSV.
    #[arg(long)]
    sources_output: Option<PathBuf>,
    /// Defaults to `<output>.manifest.json`.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    skip_smoothing: bool,
    #[arg(long, value_enum)]
    ground_mask: Option<Switch>,
    /// Candidate radius [px]; overrides the derived radius.
    #[arg(long)]
    radius: Option<f64>,
    /// Expected rotational calibration error [deg].
    #[arg(long)]
    theta_calib: Option<f64>,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    left: PathBuf,
    #[arg(long)]
    right: PathBuf,
    /// LiDAR points (`.ply`).
    #[arg(long)]
    points: PathBuf,
    /// Best pose as JSON.
    #[arg(long)]
    output: PathBuf,
    /// Every evaluated candidate as CSV.
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long)]
    no_background_term: bool,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Scene description (TOML); built-in default scene when absent.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    estimate: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Comma-separated bucket edges [m].
    #[arg(long, value_delimiter = ',')]
    buckets: Option<Vec<f64>>,
    /// Also write the JSON report here, with a manifest next to it.
    #[arg(long)]
    output: Option<PathBuf>,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::UnsupportedGeometry { .. } => EXIT_CONFIG,
        Error::Io(_) | Error::Format(_) | Error::Dimension(_) => EXIT_IO,
        Error::Domain(_) | Error::NoData(_) | Error::Degenerate(_) | Error::Precondition(_) => EXIT_NUMERICAL,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Complete(a) => commands::complete(a),
        Command::Calibrate(a) => commands::calibrate(a),
        Command::Synth(a) => commands::synth(a),
        Command::Eval(a) => commands::eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
