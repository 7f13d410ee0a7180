//! `kcl`: build worlds, evaluate losses and check the bounds from the command line.
//!
//! Exit status is 0 when every check in the report passes, 2 when a check
//! fails and 1 on usage, input or I/O errors.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{parse_delta, DeltaArg};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] kcl_core::Error),
    #[error(transparent)]
    Train(#[from] kcl_core::TrainError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Parser, Debug)]
#[command(name = "kcl", version, about = "Kernel contrastive learning workbench on finite worlds")]
struct Cli {
    /// Worker threads for parallel sweeps and trials (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build or validate world files.
    #[command(subcommand)]
    World(WorldCmd),
    /// Similarity structure checks.
    #[command(subcommand)]
    Sim(SimCmd),
    /// Loss evaluation.
    #[command(subcommand)]
    Loss(LossCmd),
    /// InfoNCE / KCL / spectral loss relations.
    #[command(subcommand)]
    Relations(RelationsCmd),
    /// Cluster geometry of an encoder.
    #[command(subcommand)]
    Geometry(GeometryCmd),
    /// Bound checks.
    Bounds(BoundsArgs),
    /// Projected SGD on the empirical KCL loss.
    Train(TrainArgs),
    /// Parameter sweeps.
    #[command(subcommand)]
    Sweep(SweepCmd),
}

#[derive(Subcommand, Debug)]
enum WorldCmd {
    Build(WorldBuildArgs),
    Validate { path: PathBuf },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum WorldKind {
    DisjointBalls,
    OverlapBalls,
}

#[derive(Args, Debug)]
struct WorldBuildArgs {
    #[arg(long, value_enum)]
    kind: WorldKind,
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, default_value_t = 4)]
    resolution: usize,
    #[arg(long, short = 'o', alias = "out")]
    report: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum SimCmd {
    Check(Common),
}

#[derive(Subcommand, Debug)]
enum LossCmd {
    Eval(LossArgs),
}

#[derive(Subcommand, Debug)]
enum RelationsCmd {
    Check(RelationsArgs),
}

#[derive(Subcommand, Debug)]
enum GeometryCmd {
    Report(EncodedArgs),
}

#[derive(Subcommand, Debug)]
enum SweepCmd {
    Lambda(SweepArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

impl Format {
    fn name(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Csv => "csv",
        }
    }
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// World file or builtin:<kind>[:key=value...].
    #[arg(long)]
    world: String,
    /// linear, quadratic or gaussian:sigma2=<v>.
    #[arg(long, default_value = "linear")]
    kernel: String,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// A number, or "auto" for the largest admissible δ.
    #[arg(long, default_value = "auto", value_parser = parse_delta)]
    delta: DeltaArg,
    /// Overridden by KCL_SEED.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path; stdout when absent.
    #[arg(long, short = 'o', alias = "out")]
    report: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct EncoderArgs {
    /// Encoder checkpoint (JSON); a seeded random table encoder when absent.
    #[arg(long)]
    encoder: Option<PathBuf>,
    /// Output dimension of the random encoder.
    #[arg(long, default_value_t = 4)]
    dim: usize,
}

#[derive(Args, Debug, Clone)]
struct EncodedArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    encoder: EncoderArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
enum LossKind {
    Kcl,
    Nce,
    Scl,
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
enum VariantArg {
    Standard,
    Decoupled,
    Asymptotic,
    Dcl,
}

#[derive(Args, Debug, Clone)]
struct NceArgs {
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    /// Negatives per anchor.
    #[arg(long, default_value_t = 8)]
    m: usize,
    /// Monte-Carlo samples when exact enumeration is too large.
    #[arg(long, default_value_t = 4096)]
    samples: usize,
}

#[derive(Args, Debug, Clone)]
struct LossArgs {
    #[command(flatten)]
    base: EncodedArgs,
    #[arg(long, value_enum, default_value_t = LossKind::Kcl)]
    loss: LossKind,
    #[arg(long, value_enum, default_value_t = VariantArg::Standard)]
    variant: VariantArg,
    #[command(flatten)]
    nce: NceArgs,
    /// Also evaluate the empirical KCL loss on this many sampled pairs.
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Args, Debug, Clone)]
struct RelationsArgs {
    #[command(flatten)]
    base: EncodedArgs,
    #[command(flatten)]
    nce: NceArgs,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
enum BoundKind {
    Decomposition,
    Equality,
    Classification,
    Generalization,
    Surrogate,
    Ncut,
    All,
}

#[derive(Args, Debug, Clone)]
struct GenArgs {
    /// Pairs per sample.
    #[arg(long, default_value_t = 64)]
    n: usize,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 200)]
    class_size: usize,
    #[arg(long, default_value_t = 200)]
    draws: usize,
    #[arg(long, default_value_t = 8)]
    permutations: usize,
}

#[derive(Args, Debug, Clone)]
struct BoundsArgs {
    #[arg(value_enum)]
    which: BoundKind,
    #[command(flatten)]
    base: EncodedArgs,
    #[command(flatten)]
    gen: GenArgs,
    /// Random partitions for the normalized-cut identities.
    #[arg(long, default_value_t = 4)]
    partitions: usize,
    /// Training steps for the surrogate check.
    #[arg(long, default_value_t = 2000)]
    steps: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
enum ModelKind {
    Table,
    Mlp,
}

#[derive(Args, Debug, Clone)]
struct TrainOpts {
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 100)]
    track_every: usize,
    #[arg(long, default_value_t = 4)]
    dim: usize,
}

#[derive(Args, Debug, Clone)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    opts: TrainOpts,
    #[arg(long, value_enum, default_value_t = ModelKind::Table)]
    model: ModelKind,
    /// Hidden widths of the MLP, comma separated.
    #[arg(long, default_value = "16")]
    hidden: String,
    /// Where to write the trained encoder.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    opts: TrainOpts,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    values: Vec<f64>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

/// Whether every check in the emitted report passed.
pub struct Outcome {
    pub pass: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("kcl: usage: --jobs must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("kcl: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(cli.command) {
        Ok(Outcome { pass: true }) => ExitCode::SUCCESS,
        Ok(Outcome { pass: false }) => ExitCode::from(2),
        Err(e) => {
            eprintln!("kcl: {e}");
            ExitCode::from(1)
        }
    }
}
