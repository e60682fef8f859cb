use std::fs;
use std::path::{Path, PathBuf};

use maskpos_core::analytic::analytic_gram;
use maskpos_core::experiments::{
    compare_matrices, diagonal_normalize_matrix, run_experiment, run_experiment_with_workers,
    ExperimentStats, ToleranceRule,
};
use maskpos_core::io::{read_matrix_csv, render_pgm, write_matrix_csv, Manifest};
use maskpos_core::{
    Alpha, ComparisonReport, Error, ExperimentSpec, LayerSpec, Mask, Matrix, Mode, Normalization,
    ScoreScale,
};

use crate::args::{AnalyticArgs, CompareArgs, ModeArg, NormArg, RenderArgs, ScaleArg, SimulateArgs};

pub const MANIFEST_FILE: &str = "manifest.txt";

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success = 0,
    Failure = 1,
    Usage = 2,
    Io = 3,
}

#[derive(Debug)]
pub struct CliError {
    pub status: Status,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            status: Status::Usage,
            message: message.into(),
        }
    }

    pub fn failure(message: impl Into<String>) -> Self {
        CliError {
            status: Status::Failure,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Domain(_) | Error::Config(_) | Error::DimensionMismatch { .. } => Status::Usage,
            Error::Parse { .. } | Error::Io { .. } => Status::Io,
            Error::DegenerateRow { .. } => Status::Failure,
        };
        CliError {
            status,
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError {
        status: Status::Io,
        message: format!("{}: {e}", path.display()),
    }
}

/// Builds and validates the experiment a `simulate` invocation describes.
pub fn experiment_spec(args: &SimulateArgs) -> CliResult<ExperimentSpec> {
    let mode = match args.mode {
        ModeArg::Nope => Mode::Nope,
        ModeArg::RopeDecoder => Mode::RopeDecoder,
        ModeArg::RopeEncoder => Mode::RopeEncoder,
    };
    if mode == Mode::Nope && args.theta.is_some() {
        return Err(CliError::usage("--theta applies only to the rope modes"));
    }
    let layer_spec = LayerSpec {
        norm: match args.norm {
            NormArg::L2 => Normalization::L2,
            NormArg::Layernorm => Normalization::LayerNorm,
        },
        score_scale: match args.scale {
            ScaleArg::One => ScoreScale::One,
            ScaleArg::SqrtD => ScoreScale::SqrtD,
            ScaleArg::D => ScoreScale::D,
        },
        residual: args.residual.is_on(),
        mask: Mask::Causal,
        rope: args.theta,
    };
    let spec = ExperimentSpec {
        n: args.n,
        d: args.d,
        alpha: Alpha::new(args.alpha)?,
        layers: args.layers,
        trials: args.trials,
        master_seed: args.seed,
        layer_spec,
        mode,
    }
    .with_mode(mode);
    spec.validate()?;
    if args.workers == Some(0) {
        return Err(CliError::usage("--workers must be at least 1"));
    }
    Ok(spec)
}

/// Files a finished experiment produces, in write order.
pub fn output_files(spec: &ExperimentSpec, stats: &ExperimentStats) -> Vec<(String, Matrix)> {
    let mut files = Vec::new();
    for (l, (attn, scores)) in stats
        .attention
        .layers
        .iter()
        .zip(&stats.scores.layers)
        .enumerate()
    {
        let k = l + 1;
        files.push((format!("layer{k}_mean.csv"), attn.mean.clone()));
        files.push((format!("layer{k}_stderr.csv"), attn.stderr.clone()));
        files.push((format!("layer{k}_scores_mean.csv"), scores.mean.clone()));
        files.push((format!("layer{k}_scores_stderr.csv"), scores.stderr.clone()));
        if spec.mode.uses_rope() {
            let masked = spec.is_masked();
            files.push((
                format!("layer{k}_diagnorm.csv"),
                diagonal_normalize_matrix(&attn.mean, masked),
            ));
            files.push((
                format!("layer{k}_scores_diagnorm.csv"),
                diagonal_normalize_matrix(&scores.mean, masked),
            ));
        }
    }
    if spec.mode == Mode::Nope && stats.gram.layers.len() >= 2 {
        let gram = stats.gram.layer(2);
        files.push(("layer2_gram_mean.csv".into(), gram.mean.clone()));
        files.push(("layer2_gram_stderr.csv".into(), gram.stderr.clone()));
        let ls = &spec.layer_spec;
        if ls.norm == Normalization::L2 && ls.score_scale == ScoreScale::One && ls.mask == Mask::Causal {
            let oracle = analytic_gram(spec.n, spec.alpha, ls.residual)
                .expect("n >= 1 after validation");
            files.push(("layer2_gram_analytic.csv".into(), oracle.entries));
        }
    }
    files
}

fn ensure_writable(dir: &Path, names: &[&str], force: bool) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    if !force {
        if let Some(existing) = names.iter().map(|n| dir.join(n)).find(|p| p.exists()) {
            return Err(CliError {
                status: Status::Io,
                message: format!(
                    "refusing to overwrite {} (pass --force to replace results)",
                    existing.display()
                ),
            });
        }
    }
    Ok(())
}

pub struct SimulateSummary {
    pub spec: ExperimentSpec,
    pub written: Vec<PathBuf>,
}

pub fn simulate(args: &SimulateArgs) -> CliResult<SimulateSummary> {
    let spec = experiment_spec(args)?;
    let stats = match args.workers {
        Some(w) => run_experiment_with_workers(&spec, w)?,
        None => run_experiment(&spec)?,
    };
    let files = output_files(&spec, &stats);

    let mut names: Vec<&str> = files.iter().map(|(n, _)| n.as_str()).collect();
    names.push(MANIFEST_FILE);
    ensure_writable(&args.out, &names, args.force)?;

    let mut written = Vec::with_capacity(names.len());
    for (name, matrix) in &files {
        let path = args.out.join(name);
        write_matrix_csv(&path, matrix)?;
        written.push(path);
    }
    let mut manifest = Manifest::from_spec(&spec);
    manifest.set(
        "files",
        files.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>().join(" "),
    );
    let path = args.out.join(MANIFEST_FILE);
    manifest.write(&path)?;
    written.push(path);
    Ok(SimulateSummary { spec, written })
}

pub fn analytic(args: &AnalyticArgs) -> CliResult<PathBuf> {
    let alpha = Alpha::new(args.alpha)?;
    let gram = analytic_gram(args.n, alpha, args.residual.is_on())?;
    if args.out.exists() && !args.force {
        return Err(CliError {
            status: Status::Io,
            message: format!("refusing to overwrite {} (pass --force)", args.out.display()),
        });
    }
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    write_matrix_csv(&args.out, &gram.entries)?;
    Ok(args.out.clone())
}

pub fn compare(args: &CompareArgs) -> CliResult<ComparisonReport> {
    if args.abs_floor.is_nan() || args.abs_floor < 0.0 {
        return Err(CliError::usage("--abs-floor must be non-negative"));
    }
    let mean = read_matrix_csv(&args.sim)?;
    let oracle = read_matrix_csv(&args.analytic)?;
    let stderr = read_matrix_csv(&args.stderr)?;
    Ok(compare_matrices(
        &mean,
        &stderr,
        &oracle,
        ToleranceRule::three_sigma(args.abs_floor),
        2,
    )?)
}

pub fn render(args: &RenderArgs) -> CliResult<PathBuf> {
    let matrix = read_matrix_csv(&args.input)?;
    let bytes = render_pgm(&matrix, args.q_low, args.q_high, args.causal)?;
    if args.output.exists() && !args.force {
        return Err(CliError {
            status: Status::Io,
            message: format!("refusing to overwrite {} (pass --force)", args.output.display()),
        });
    }
    fs::write(&args.output, bytes).map_err(|e| io_error(&args.output, e))?;
    Ok(args.output.clone())
}
