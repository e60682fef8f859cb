//! Monte Carlo harness: many independent forward passes over freshly sampled
//! inputs, reduced to per-cell means and standard errors.
//!
//! Trial `t` draws its inputs from [`trial_rng`]`(master_seed, t)`. Trials are
//! grouped into fixed-size chunks whose boundaries do not depend on the worker
//! count; chunks run in parallel and are merged in chunk order, so results are
//! bit-identical for any number of workers.

use std::fmt;

use rayon::prelude::*;

use crate::analytic::{Alpha, AnalyticGram};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::simulation::{forward_trace, sample_inputs_with, trial_rng, LayerSpec, Mask, ScoreMatrix};
use crate::stats::MatrixWelford;

/// Trials per reduction chunk. Part of the determinism contract: changing it
/// changes the floating-point summation order.
pub const TRIALS_PER_CHUNK: u64 = 256;

pub const DEFAULT_ROPE_THETA: f64 = 10_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// No positional encoding; the causal mask is the only source of position.
    Nope,
    /// RoPE with a causal mask.
    RopeDecoder,
    /// RoPE without a mask (control).
    RopeEncoder,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Nope => "nope",
            Mode::RopeDecoder => "rope-decoder",
            Mode::RopeEncoder => "rope-encoder",
        }
    }

    pub fn uses_rope(self) -> bool {
        !matches!(self, Mode::Nope)
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nope" => Ok(Mode::Nope),
            "rope-decoder" => Ok(Mode::RopeDecoder),
            "rope-encoder" => Ok(Mode::RopeEncoder),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentSpec {
    pub n: usize,
    pub d: usize,
    pub alpha: Alpha,
    pub layers: usize,
    pub trials: u64,
    pub master_seed: u64,
    pub layer_spec: LayerSpec,
    pub mode: Mode,
}

impl ExperimentSpec {
    /// Desk-scale defaults: 16 positions, width 64, four layers, 20 000 trials.
    pub fn desk(mode: Mode, alpha: Alpha) -> Self {
        ExperimentSpec {
            n: 16,
            d: 64,
            alpha,
            layers: 4,
            trials: 20_000,
            master_seed: 0,
            layer_spec: LayerSpec::default(),
            mode: Mode::Nope,
        }
        .with_mode(mode)
    }

    /// Full-size run: 50 positions, 100 000 trials.
    pub fn full_scale(mode: Mode, alpha: Alpha) -> Self {
        ExperimentSpec {
            n: 50,
            trials: 100_000,
            ..ExperimentSpec::desk(mode, alpha)
        }
    }

    /// Sets the mode and the mask/RoPE fields it implies. A RoPE base already
    /// present is kept.
    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        match mode {
            Mode::Nope => self.layer_spec.rope = None,
            Mode::RopeDecoder => {
                self.layer_spec.mask = Mask::Causal;
                self.layer_spec.rope.get_or_insert(DEFAULT_ROPE_THETA);
            }
            Mode::RopeEncoder => {
                self.layer_spec.mask = Mask::None;
                self.layer_spec.rope.get_or_insert(DEFAULT_ROPE_THETA);
            }
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("n must be >= 1".into()));
        }
        if self.layers == 0 {
            return Err(Error::Config("layers must be >= 1".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        self.layer_spec.validate(self.d)?;
        let ls = &self.layer_spec;
        match self.mode {
            Mode::Nope if ls.rope.is_some() => {
                Err(Error::Config("mode nope does not take a RoPE base".into()))
            }
            Mode::RopeDecoder | Mode::RopeEncoder if ls.rope.is_none() => Err(Error::Config(
                format!("mode {} needs a RoPE base", self.mode.name()),
            )),
            Mode::RopeDecoder if ls.mask != Mask::Causal => {
                Err(Error::Config("mode rope-decoder needs the causal mask".into()))
            }
            Mode::RopeEncoder if ls.mask != Mask::None => {
                Err(Error::Config("mode rope-encoder runs without a mask".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn is_masked(&self) -> bool {
        self.layer_spec.mask == Mask::Causal
    }
}

/// Mean and standard error of one layer's matrices across trials.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStats {
    pub mean: Matrix,
    pub stderr: Matrix,
    pub trials: u64,
}

/// Per-layer statistics, index 0 is the first layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionStats {
    pub layers: Vec<LayerStats>,
    pub masked: bool,
}

impl AttentionStats {
    /// 1-based layer lookup.
    pub fn layer(&self, layer: usize) -> &LayerStats {
        &self.layers[layer - 1]
    }

    pub fn mean_scores(&self, layer: usize) -> ScoreMatrix {
        ScoreMatrix {
            entries: self.layer(layer).mean.clone(),
            masked: self.masked,
        }
    }

    fn from_accumulators(acc: &[MatrixWelford], masked: bool) -> Self {
        AttentionStats {
            layers: acc
                .iter()
                .map(|w| LayerStats {
                    mean: w.mean().clone(),
                    stderr: w.stderr(),
                    trials: w.count(),
                })
                .collect(),
            masked,
        }
    }
}

/// Everything one experiment measures.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentStats {
    /// Post-softmax attention weights.
    pub attention: AttentionStats,
    /// Pre-softmax scores (after RoPE and scaling, before the mask).
    pub scores: AttentionStats,
    /// Gram matrix of each layer's normalized input; entry 1 is the
    /// second-layer Gram `⟨y_i⁽²⁾, y_j⁽²⁾⟩`.
    pub gram: AttentionStats,
}

#[derive(Clone)]
struct Accumulator {
    attention: Vec<MatrixWelford>,
    scores: Vec<MatrixWelford>,
    gram: Vec<MatrixWelford>,
}

impl Accumulator {
    fn new(spec: &ExperimentSpec) -> Self {
        let fresh = || vec![MatrixWelford::new(spec.n, spec.n); spec.layers];
        Accumulator {
            attention: fresh(),
            scores: fresh(),
            gram: fresh(),
        }
    }

    fn run_trial(&mut self, spec: &ExperimentSpec, trial: u64) -> Result<()> {
        let mut rng = trial_rng(spec.master_seed, trial);
        let x = sample_inputs_with(&mut rng, spec.n, spec.d, spec.alpha)?;
        let x = spec.layer_spec.prepare_inputs(x)?;
        let traces = forward_trace(&x, &spec.layer_spec, spec.layers)?;
        for (l, t) in traces.iter().enumerate() {
            self.attention[l].push(&t.attention.entries)?;
            self.scores[l].push(&t.logits)?;
            self.gram[l].push(&t.gram)?;
        }
        Ok(())
    }

    fn merge(&mut self, other: &Accumulator) -> Result<()> {
        let pairs = self
            .attention
            .iter_mut()
            .zip(&other.attention)
            .chain(self.scores.iter_mut().zip(&other.scores))
            .chain(self.gram.iter_mut().zip(&other.gram));
        for (mine, theirs) in pairs {
            mine.merge(theirs)?;
        }
        Ok(())
    }
}

/// Runs the experiment on rayon's global pool.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentStats> {
    spec.validate()?;
    let chunks = spec.trials.div_ceil(TRIALS_PER_CHUNK);
    let parts: Vec<Result<Accumulator>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = Accumulator::new(spec);
            let start = c * TRIALS_PER_CHUNK;
            let end = (start + TRIALS_PER_CHUNK).min(spec.trials);
            for t in start..end {
                acc.run_trial(spec, t)?;
            }
            Ok(acc)
        })
        .collect();

    let mut total = Accumulator::new(spec);
    for part in parts {
        total.merge(&part?)?;
    }
    let masked = spec.is_masked();
    Ok(ExperimentStats {
        attention: AttentionStats::from_accumulators(&total.attention, masked),
        scores: AttentionStats::from_accumulators(&total.scores, false),
        gram: AttentionStats::from_accumulators(&total.gram, false),
    })
}

/// Runs the experiment on a dedicated pool of `workers` threads.
pub fn run_experiment_with_workers(spec: &ExperimentSpec, workers: usize) -> Result<ExperimentStats> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot build a {workers}-thread pool: {e}")))?;
    pool.install(|| run_experiment(spec))
}

/// Trial-averaged second-layer Gram `⟨y_i⁽²⁾, y_j⁽²⁾⟩`, the quantity the
/// closed forms predict. Only meaningful without RoPE.
pub fn layer2_gram_stats(spec: &ExperimentSpec) -> Result<LayerStats> {
    if spec.mode != Mode::Nope {
        return Err(Error::Config(
            "second-layer Gram statistics are defined for mode nope".into(),
        ));
    }
    let spec = ExperimentSpec {
        layers: spec.layers.max(2),
        ..*spec
    };
    let stats = run_experiment(&spec)?;
    Ok(stats.gram.layer(2).clone())
}

/// Subtracts from every cell the mean of its diagonal (all cells sharing the
/// offset `i - j`). Masked cells stay exactly zero and do not enter any mean.
pub fn diagonal_normalize_matrix(a: &Matrix, masked: bool) -> Matrix {
    let (rows, cols) = a.shape();
    let span = rows + cols;
    // offset i - j shifted by cols - 1 so it indexes from 0
    let slot = |i: usize, j: usize| i + cols - 1 - j;
    let valid = |i: usize, j: usize| !masked || j <= i;

    let mut sums = vec![0.0; span];
    let mut counts = vec![0usize; span];
    for i in 0..rows {
        for j in 0..cols {
            if valid(i, j) {
                sums[slot(i, j)] += a[(i, j)];
                counts[slot(i, j)] += 1;
            }
        }
    }
    let means: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    Matrix::from_fn(rows, cols, |i, j| {
        if valid(i, j) {
            a[(i, j)] - means[slot(i, j)]
        } else {
            0.0
        }
    })
}

pub fn diagonal_normalize(a: &ScoreMatrix) -> ScoreMatrix {
    ScoreMatrix {
        entries: diagonal_normalize_matrix(&a.entries, a.masked),
        masked: a.masked,
    }
}

/// Per-cell acceptance rule `|mean - oracle| <= max(abs_floor, sigmas · stderr)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToleranceRule {
    pub abs_floor: f64,
    pub sigmas: f64,
}

impl ToleranceRule {
    pub fn three_sigma(abs_floor: f64) -> Self {
        ToleranceRule {
            abs_floor,
            sigmas: 3.0,
        }
    }

    /// Floor used against the closed forms: 0.01 at α = 0, 0.02 otherwise.
    pub fn for_alpha(alpha: Alpha) -> Self {
        Self::three_sigma(if alpha.value() == 0.0 { 0.01 } else { 0.02 })
    }

    #[inline]
    pub fn allowed(&self, stderr: f64) -> f64 {
        self.abs_floor.max(self.sigmas * stderr)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub layer: usize,
    pub max_abs_error: f64,
    pub mean_abs_error: f64,
    /// 1-based (query, key) of the largest error.
    pub worst_cell: (usize, usize),
    /// Row-major pass flags, `n × n`.
    pub per_cell_pass: Vec<bool>,
    pub n: usize,
    pub tolerance: ToleranceRule,
}

impl ComparisonReport {
    pub fn all_pass(&self) -> bool {
        self.per_cell_pass.iter().all(|&p| p)
    }

    pub fn passes(&self, i: usize, j: usize) -> bool {
        self.per_cell_pass[i * self.n + j]
    }

    pub fn failures(&self) -> usize {
        self.per_cell_pass.iter().filter(|&&p| !p).count()
    }
}

impl fmt::Display for ComparisonReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "layer {}: {}/{} cells pass (abs floor {}, {}·stderr); max |err| {:.3e} at ({}, {}), mean |err| {:.3e}",
            self.layer,
            self.per_cell_pass.len() - self.failures(),
            self.per_cell_pass.len(),
            self.tolerance.abs_floor,
            self.tolerance.sigmas,
            self.max_abs_error,
            self.worst_cell.0,
            self.worst_cell.1,
            self.mean_abs_error,
        )
    }
}

/// Cell-by-cell comparison of a simulated mean against a reference matrix.
pub fn compare_matrices(
    mean: &Matrix,
    stderr: &Matrix,
    oracle: &Matrix,
    rule: ToleranceRule,
    layer: usize,
) -> Result<ComparisonReport> {
    for (name, m) in [("stderr", stderr), ("oracle", oracle)] {
        if m.shape() != mean.shape() {
            return Err(Error::DimensionMismatch {
                expected: format!("{:?}", mean.shape()),
                found: format!("{:?} for {name}", m.shape()),
            });
        }
    }
    if !mean.is_square() {
        return Err(Error::DimensionMismatch {
            expected: "a square matrix".into(),
            found: format!("{:?}", mean.shape()),
        });
    }
    let n = mean.rows();
    let mut per_cell_pass = Vec::with_capacity(n * n);
    let mut max_abs_error = 0.0;
    let mut total = 0.0;
    let mut worst_cell = (1, 1);
    for i in 0..n {
        for j in 0..n {
            let err = (mean[(i, j)] - oracle[(i, j)]).abs();
            per_cell_pass.push(err <= rule.allowed(stderr[(i, j)]));
            total += err;
            if err > max_abs_error {
                max_abs_error = err;
                worst_cell = (i + 1, j + 1);
            }
        }
    }
    Ok(ComparisonReport {
        layer,
        max_abs_error,
        mean_abs_error: total / (n * n) as f64,
        worst_cell,
        per_cell_pass,
        n,
        tolerance: rule,
    })
}

/// Compares second-layer Gram statistics with the closed-form prediction.
pub fn compare_to_analytic(
    stats: &LayerStats,
    oracle: &AnalyticGram,
    rule: ToleranceRule,
) -> Result<ComparisonReport> {
    if stats.mean.rows() != oracle.n {
        return Err(Error::Config(format!(
            "simulated Gram has n = {}, closed form has n = {}",
            stats.mean.rows(),
            oracle.n
        )));
    }
    compare_matrices(&stats.mean, &stats.stderr, &oracle.entries, rule, 2)
}

/// Nearest-rank quantile of ascending `sorted` values: the value at rank
/// `max(1, ⌈q·N⌉)`.
pub fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

/// Clamps valid cells into `[Q(q_low), Q(q_high)]` using nearest-rank
/// quantiles over the valid cells. Masked cells are left untouched.
pub fn quantile_clip(a: &ScoreMatrix, q_low: f64, q_high: f64) -> Result<ScoreMatrix> {
    if !(0.0 <= q_low && q_low < q_high && q_high <= 1.0) {
        return Err(Error::Config(format!(
            "quantiles must satisfy 0 <= q_low < q_high <= 1, got {q_low}, {q_high}"
        )));
    }
    let n = a.entries.rows();
    let mut values: Vec<f64> = Vec::with_capacity(n * a.entries.cols());
    for i in 0..n {
        for j in 0..a.entries.cols() {
            if a.is_valid(i, j) {
                values.push(a.entries[(i, j)]);
            }
        }
    }
    if values.is_empty() {
        return Ok(a.clone());
    }
    values.sort_by(f64::total_cmp);
    let lo = nearest_rank(&values, q_low);
    let hi = nearest_rank(&values, q_high);
    let mut out = a.clone();
    for i in 0..n {
        for j in 0..a.entries.cols() {
            if a.is_valid(i, j) {
                let v = &mut out.entries[(i, j)];
                *v = v.clamp(lo, hi);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::ScoreMatrix;

    fn causal(rows: &[Vec<f64>]) -> ScoreMatrix {
        ScoreMatrix {
            entries: Matrix::from_rows(rows).unwrap(),
            masked: true,
        }
    }

    fn small(mode: Mode) -> ExperimentSpec {
        ExperimentSpec {
            n: 6,
            d: 16,
            layers: 3,
            trials: 40,
            ..ExperimentSpec::desk(mode, Alpha::ZERO)
        }
    }

    #[test]
    fn mode_fixes_mask_and_rope() {
        let enc = ExperimentSpec::desk(Mode::RopeEncoder, Alpha::ZERO);
        assert_eq!(enc.layer_spec.mask, Mask::None);
        assert_eq!(enc.layer_spec.rope, Some(DEFAULT_ROPE_THETA));
        let nope = enc.with_mode(Mode::Nope);
        assert_eq!(nope.layer_spec.rope, None);
        assert!(nope.validate().is_ok());

        let mut bad = ExperimentSpec::desk(Mode::Nope, Alpha::ZERO);
        bad.layer_spec.rope = Some(10.0);
        assert!(bad.validate().is_err());
        let mut bad = ExperimentSpec::desk(Mode::RopeEncoder, Alpha::ZERO);
        bad.layer_spec.mask = Mask::Causal;
        assert!(bad.validate().is_err());
        let bad = ExperimentSpec {
            trials: 0,
            ..small(Mode::Nope)
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn single_trial_is_the_forward_pass() {
        let spec = ExperimentSpec {
            trials: 1,
            master_seed: 99,
            ..small(Mode::Nope)
        };
        let stats = run_experiment(&spec).unwrap();
        let x = sample_inputs_with(&mut trial_rng(99, 0), spec.n, spec.d, spec.alpha).unwrap();
        let traces = forward_trace(&x, &spec.layer_spec, spec.layers).unwrap();
        for (l, t) in traces.iter().enumerate() {
            let s = &stats.attention.layers[l];
            assert_eq!(s.trials, 1);
            assert_eq!(s.mean, t.attention.entries);
            assert!(s.stderr.as_slice().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn mean_attention_rows_sum_to_one() {
        let stats = run_experiment(&small(Mode::RopeDecoder)).unwrap();
        for layer in &stats.attention.layers {
            for (i, row) in layer.mean.row_iter().enumerate() {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
                assert!(row[i + 1..].iter().all(|&v| v == 0.0));
            }
            assert!(layer.stderr.as_slice().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let spec = ExperimentSpec {
            trials: 3 * TRIALS_PER_CHUNK + 17,
            ..small(Mode::RopeEncoder)
        };
        let one = run_experiment_with_workers(&spec, 1).unwrap();
        let four = run_experiment_with_workers(&spec, 4).unwrap();
        assert_eq!(one, four);
    }

    #[test]
    fn layer2_gram_requires_nope() {
        assert!(layer2_gram_stats(&small(Mode::RopeDecoder)).is_err());
        let g = layer2_gram_stats(&ExperimentSpec {
            layers: 1,
            ..small(Mode::Nope)
        })
        .unwrap();
        for i in 0..6 {
            assert!((g.mean[(i, i)] - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn diagonal_normalize_examples() {
        let toeplitz = ScoreMatrix {
            entries: Matrix::from_fn(5, 5, |i, j| 1.0 / (1.0 + (i as f64 - j as f64).abs())),
            masked: false,
        };
        let z = diagonal_normalize(&toeplitz);
        assert!(z.entries.as_slice().iter().all(|v| v.abs() < 1e-15));

        let (a, b, c) = (0.9, 0.3, 0.4);
        let z = diagonal_normalize(&causal(&[vec![a, 0.0], vec![b, c]]));
        assert!((z.entries[(0, 0)] - (a - c) / 2.0).abs() < 1e-15);
        assert_eq!(z.entries[(0, 1)], 0.0);
        assert_eq!(z.entries[(1, 0)], 0.0);
        assert!((z.entries[(1, 1)] - (c - a) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn compare_examples() {
        let oracle = crate::analytic::analytic_gram(4, Alpha::ZERO, true).unwrap();
        let zeros = Matrix::zeros(4, 4);
        let stats = LayerStats {
            mean: oracle.entries.clone(),
            stderr: zeros.clone(),
            trials: 1,
        };
        let rule = ToleranceRule::three_sigma(0.01);
        let report = compare_to_analytic(&stats, &oracle, rule).unwrap();
        assert_eq!(report.max_abs_error, 0.0);
        assert!(report.all_pass());

        let mut corrupted = stats.clone();
        corrupted.mean[(2, 1)] += 0.5;
        let report = compare_to_analytic(&corrupted, &oracle, rule).unwrap();
        assert!(!report.passes(2, 1));
        assert_eq!(report.failures(), 1);
        assert_eq!(report.worst_cell, (3, 2));
        assert!(report.max_abs_error >= report.mean_abs_error);

        let wrong = crate::analytic::analytic_gram(3, Alpha::ZERO, true).unwrap();
        assert!(compare_to_analytic(&stats, &wrong, rule).is_err());
    }

    #[test]
    fn quantile_examples() {
        let ramp = ScoreMatrix {
            entries: Matrix::from_fn(10, 10, |i, j| (i * 10 + j + 1) as f64),
            masked: false,
        };
        assert_eq!(quantile_clip(&ramp, 0.0, 1.0).unwrap(), ramp);

        let clipped = quantile_clip(&ramp, 0.01, 0.99).unwrap();
        // nearest rank: ⌈0.01·100⌉ = 1 → 1.0, ⌈0.99·100⌉ = 99 → 99.0
        let mut expected = ramp.clone();
        expected.entries[(9, 9)] = 99.0;
        assert_eq!(clipped, expected);

        let flat = ScoreMatrix {
            entries: Matrix::filled(3, 3, 0.25),
            masked: true,
        };
        assert_eq!(quantile_clip(&flat, 0.1, 0.9).unwrap(), flat);
        assert!(quantile_clip(&flat, 0.5, 0.5).is_err());
    }
}
