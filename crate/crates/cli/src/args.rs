use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "maskpos", version, about = "Positional patterns induced by the causal attention mask")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a Monte Carlo experiment and write per-layer statistics as CSV.
    Simulate(SimulateArgs),
    /// Write the closed-form second-layer Gram matrix as CSV.
    Analytic(AnalyticArgs),
    /// Compare a simulated mean against a reference matrix cell by cell.
    Compare(CompareArgs),
    /// Render a matrix CSV as a binary PGM heatmap.
    Render(RenderArgs),
    /// Run the acceptance suite.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Nope,
    RopeDecoder,
    RopeEncoder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NormArg {
    L2,
    Layernorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScaleArg {
    One,
    SqrtD,
    D,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

impl Switch {
    pub fn is_on(self) -> bool {
        self == Switch::On
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "nope")]
    pub mode: ModeArg,
    /// Sequence length.
    #[arg(long, default_value_t = 16)]
    pub n: usize,
    /// Hidden size.
    #[arg(long, default_value_t = 64)]
    pub d: usize,
    /// Expected inner product between distinct inputs, in [0, 1).
    #[arg(long, default_value_t = 0.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 4)]
    pub layers: usize,
    #[arg(long, default_value_t = 20_000)]
    pub trials: u64,
    /// Master seed; trial t uses an independent stream derived from (seed, t).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "l2")]
    pub norm: NormArg,
    #[arg(long, value_enum, default_value = "one")]
    pub scale: ScaleArg,
    #[arg(long, value_enum, default_value = "on")]
    pub residual: Switch,
    /// RoPE base (rope modes only; defaults to 10000).
    #[arg(long)]
    pub theta: Option<f64>,
    /// Output directory, created if absent.
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite existing result files.
    #[arg(long)]
    pub force: bool,
    /// Worker threads (results do not depend on this).
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyticArgs {
    #[arg(long, default_value_t = 16)]
    pub n: usize,
    #[arg(long, default_value_t = 0.0)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value = "on")]
    pub residual: Switch,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    /// Simulated mean matrix.
    pub sim: PathBuf,
    /// Reference matrix (e.g. from `analytic`).
    pub analytic: PathBuf,
    /// Standard error of the simulated mean.
    pub stderr: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    pub abs_floor: f64,
}

#[derive(Debug, Clone, Args)]
pub struct RenderArgs {
    pub input: PathBuf,
    pub output: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    pub q_low: f64,
    #[arg(long, default_value_t = 1.0)]
    pub q_high: f64,
    /// Treat the strict upper triangle as masked: excluded from the color
    /// range and drawn black.
    #[arg(long)]
    pub causal: bool,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    /// Run only these criteria (1-10); all by default.
    #[arg(long, value_delimiter = ',')]
    pub only: Vec<usize>,
}
