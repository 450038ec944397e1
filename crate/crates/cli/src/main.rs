use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use regionfeat::sampling::{SupportKind, SupportSpec, DEFAULT_MAX_IN, DEFAULT_MAX_OUT};
use regionfeat::train::Task;
use regionfeat::Error;

mod commands;

/// Region feature extraction: learnable attention extractor, pooling
/// baselines, training, and analysis.
#[derive(Debug, Parser)]
#[command(name = "regionfeat", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Region features from a trained extractor.
    Extract(ExtractArgs),
    /// Region features from a hand-crafted pooling operator.
    Pool(PoolArgs),
    /// Train the extractor on a synthetic task.
    Train(TrainArgs),
    /// Compare analytic gradients against central differences.
    Gradcheck(GradcheckArgs),
    /// Multiply-accumulate counts of the extractor stages.
    Flops(FlopsArgs),
    /// Time dense against sparse support sampling.
    Bench(BenchArgs),
    /// Weight-map metrics per RoI.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Feature map tensor `[H, W, C]`.
    #[arg(long)]
    features: PathBuf,
    /// JSON list of `{"x1", "y1", "x2", "y2"}` boxes.
    #[arg(long)]
    rois: PathBuf,
    /// Divide RoI coordinates by this factor (image pixels per feature cell).
    #[arg(long, default_value_t = 1.0)]
    stride: f64,
}

#[derive(Debug, Args)]
struct SupportArgs {
    #[arg(long, default_value = "whole_image", value_parser = parse_support)]
    support: SupportKind,
    #[arg(long, default_value_t = DEFAULT_MAX_IN)]
    max_in: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_OUT)]
    max_out: usize,
    /// Sample every cell of the support.
    #[arg(long)]
    dense: bool,
}

impl SupportArgs {
    fn spec(&self, height: usize, width: usize) -> regionfeat::Result<SupportSpec> {
        if self.dense {
            Ok(SupportSpec::dense(self.support, height, width))
        } else {
            SupportSpec::new(self.support, self.max_in, self.max_out)
        }
    }
}

fn parse_support(s: &str) -> Result<SupportKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_task(s: &str) -> Result<Task, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Args)]
struct ExtractArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Checkpoint directory.
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    support: SupportArgs,
    /// Output tensor `[N, K, C]`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Regular,
    Aligned,
    Deformable,
    Ps,
    Center,
    Masked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Avg,
    Max,
}

#[derive(Debug, Args)]
struct PoolArgs {
    #[arg(long, value_enum)]
    method: Method,
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value_t = 7)]
    rows: usize,
    #[arg(long, default_value_t = 7)]
    cols: usize,
    /// Samples per bin for aligned pooling (1 or 4).
    #[arg(long, default_value_t = 1)]
    samples: usize,
    /// Reduction for regular pooling.
    #[arg(long, value_enum, default_value = "avg")]
    mode: Mode,
    /// Mask tensor `[H, W]` or `[N, H, W]` for masked pooling.
    #[arg(long)]
    masks: Option<PathBuf>,
    /// Offsets tensor `[N, K, 2]` for deformable pooling.
    #[arg(long)]
    offsets: Option<PathBuf>,
    /// Checkpoint with an offset predictor for deformable pooling.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, value_parser = parse_task, default_value = "mask_fit")]
    task: Task,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Base learning rate; defaults depend on the task.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    rois_per_step: Option<usize>,
    /// Checkpoint directory to write.
    #[arg(long)]
    out: PathBuf,
    /// JSON-lines log to write.
    #[arg(long)]
    log: PathBuf,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    scenes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = regionfeat::grad::DEFAULT_EPS)]
    eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, default_value_t = 6)]
    height: usize,
    #[arg(long, default_value_t = 6)]
    width: usize,
    #[arg(long, default_value_t = 3)]
    channels: usize,
    #[arg(long, default_value_t = 4)]
    parts: usize,
    #[arg(long, default_value_t = 4)]
    ce: usize,
    #[arg(long, default_value_t = 3)]
    cg: usize,
}

#[derive(Debug, Args)]
struct FlopsArgs {
    #[arg(long, default_value_t = 300)]
    n: u64,
    #[arg(long, default_value_t = 49)]
    k: u64,
    #[arg(long, default_value_t = 512)]
    ce: u64,
    #[arg(long, default_value_t = 256)]
    cg: u64,
    #[arg(long, default_value_t = 256)]
    cf: u64,
    #[arg(long, default_value_t = 45)]
    h: u64,
    #[arg(long, default_value_t = 50)]
    w: u64,
    #[arg(long, default_value_t = 200)]
    omega: u64,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 48)]
    height: usize,
    #[arg(long, default_value_t = 48)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    channels: usize,
    #[arg(long, default_value_t = 32)]
    rois: usize,
    #[arg(long, default_value_t = 49)]
    parts: usize,
    #[arg(long, default_value_t = 64)]
    ce: usize,
    #[arg(long, default_value_t = 32)]
    cg: usize,
    #[arg(long, default_value_t = 3)]
    repetitions: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    support: SupportArgs,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Mask tensor `[H, W]` or `[N, H, W]`; enables the mask metric.
    #[arg(long)]
    masks: Option<PathBuf>,
    #[command(flatten)]
    support: SupportArgs,
    /// Write `roi_<i>_max.pgm` weight images here.
    #[arg(long)]
    export_dir: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Lib(Error),
    /// A computation finished but failed a numerical check.
    Numerical(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Lib(e) => e.fmt(f),
            CliError::Numerical(msg) => f.write_str(msg),
        }
    }
}

fn exit_code(err: &CliError) -> u8 {
    match err {
        CliError::Lib(Error::NonFinite(_)) | CliError::Numerical(_) => 2,
        CliError::Lib(_) => 1,
    }
}

fn threads_from_env() -> Result<usize, String> {
    match std::env::var("REGIONFEAT_THREADS") {
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|_| format!("REGIONFEAT_THREADS must be a non-negative integer, got {s:?}")),
        Err(_) => Ok(0),
    }
}

fn main() -> ExitCode {
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
    match threads_from_env() {
        Ok(n) => regionfeat::par::configure_threads(n),
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Extract(a) => commands::extract(&a),
        Command::Pool(a) => commands::pool(&a),
        Command::Train(a) => commands::train(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::Flops(a) => commands::flops(&a),
        Command::Bench(a) => commands::bench(&a),
        Command::Analyze(a) => commands::analyze(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
