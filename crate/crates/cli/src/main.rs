//! `contourforge` command-line tool. JSON summaries go to stdout, logs to
//! stderr. Exit codes: 0 success, 1 domain error, 2 usage error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "contourforge",
    version,
    about = "Boundary refinement, alignment and evaluation on probability rasters"
)]
pub struct Cli {
    #[arg(long, global = true, value_enum, default_value_t = LogLevel::Warn)]
    pub log_level: LogLevel,
    /// Worker threads for dataset-parallel commands.
    #[arg(long, global = true, env = "CONTOURFORGE_THREADS")]
    pub threads: Option<usize>,
    /// Seed for commands with random initialisation.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum LogLevel {
    Error,
    Warn,
    Info,
    Debug,
    Trace,
}

impl LogLevel {
    fn filter(self) -> log::LevelFilter {
        match self {
            LogLevel::Error => log::LevelFilter::Error,
            LogLevel::Warn => log::LevelFilter::Warn,
            LogLevel::Info => log::LevelFilter::Info,
            LogLevel::Debug => log::LevelFilter::Debug,
            LogLevel::Trace => log::LevelFilter::Trace,
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Grow a coarse mask onto the ridges of a probability map.
    Refine(RefineArgs),
    /// Align a noisy GT region to a probability map.
    Align(AlignArgs),
    /// Evaluate per-class boundary predictions against GT (MF/ODS, AP).
    Eval(EvalArgs),
    /// Simulate a coarse few-click annotation of a fine mask.
    SimulateCoarse(SimulateArgs),
    /// Train the per-pixel logit model on a synthetic circle task.
    TrainToy(TrainToyArgs),
    /// Estimate boundary normals.
    Normals(NormalsArgs),
    /// Run the refinement HTTP service.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("initial").required(true).args(["init", "init_poly"])))]
pub struct RefineArgs {
    /// Probability map (FPM1, one channel).
    #[arg(long)]
    pub prob: PathBuf,
    /// Initial mask (PGM).
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Initial polygon (JSON).
    #[arg(long)]
    pub init_poly: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub c: f64,
    #[arg(long, default_value_t = 1)]
    pub mu: u32,
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.3)]
    pub threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Directory for the snapshot trajectory.
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AlignArgs {
    /// Noisy GT region (PGM).
    #[arg(long)]
    pub gt: PathBuf,
    /// Probability map (FPM1, one channel).
    #[arg(long)]
    pub prob: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub c: f64,
    #[arg(long, default_value_t = 1)]
    pub mu: u32,
    #[arg(long, default_value_t = 50)]
    pub max_steps: usize,
    #[arg(long, default_value_t = 5)]
    pub snapshot_every: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Aligned boundary (PGM).
    #[arg(long)]
    pub out_boundary: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Directory of `<image>_<class>.fpm` predictions.
    #[arg(long)]
    pub pred_dir: PathBuf,
    /// Directory of `<image>_<class>.pgm` (or `.fpm`) GT boundaries.
    #[arg(long)]
    pub gt_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub classes: usize,
    /// Matching tolerance as a fraction of the image diagonal.
    #[arg(long, default_value_t = 0.0075)]
    pub tol: f64,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub thin: bool,
    #[arg(long, default_value_t = 99)]
    pub thresholds: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Optional CSV of the PR table.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Fine mask (PGM), or a directory of them.
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long)]
    pub target_err: f64,
    /// Output mask, or a directory when `--mask` is one.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Simplified polygon (JSON); single-mask mode only.
    #[arg(long)]
    pub polygon: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainToyArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct NormalsArgs {
    /// Boundary map (FPM1 or PGM).
    #[arg(long)]
    pub boundary: PathBuf,
    #[arg(long, default_value_t = contourforge::normals::DEFAULT_NORMAL_SIGMA)]
    pub sigma: f64,
    /// Two-channel FPM1 of (cos 2θ, sin 2θ); invalid pixels are (0, 0).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Directory of rasters registered at startup.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub cors_origin: Option<String>,
    #[arg(long, default_value_t = 64)]
    pub max_sessions: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::new()
        .filter_level(cli.log_level.filter())
        .target(env_logger::Target::Stderr)
        .init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    match commands::run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
