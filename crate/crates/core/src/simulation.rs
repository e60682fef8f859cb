//! Forward pass of a parameter-free causal Transformer stack.
//!
//! Each layer normalizes its input (`Y = norm(X)`), scores every query/key pair
//! with `Y Yᵀ` (optionally rotated by RoPE and divided by a scale), applies the
//! mask and a row softmax, and returns `A Y (+ X)`. There are no projections,
//! no feed-forward block and a single head.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::analytic::Alpha;
use crate::error::{Error, Result};
use crate::matrix::{dot, norm, EmbeddingMatrix, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Normalization {
    /// Row-wise ℓ2 normalization to unit norm.
    L2,
    /// Row-wise centering followed by scaling to norm `√d`, no gain or bias.
    LayerNorm,
}

/// Divisor applied to `Y Yᵀ` before masking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScoreScale {
    One,
    SqrtD,
    D,
}

impl ScoreScale {
    pub fn divisor(self, d: usize) -> f64 {
        match self {
            ScoreScale::One => 1.0,
            ScoreScale::SqrtD => (d as f64).sqrt(),
            ScoreScale::D => d as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mask {
    /// Query `i` sees keys `j <= i`.
    Causal,
    /// Every query sees every key.
    None,
}

/// Configuration of one simulated layer; every layer of a stack shares it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerSpec {
    pub norm: Normalization,
    pub score_scale: ScoreScale,
    pub residual: bool,
    pub mask: Mask,
    /// RoPE base θ; `None` disables rotation.
    pub rope: Option<f64>,
}

impl Default for LayerSpec {
    fn default() -> Self {
        LayerSpec {
            norm: Normalization::L2,
            score_scale: ScoreScale::One,
            residual: true,
            mask: Mask::Causal,
            rope: None,
        }
    }
}

impl LayerSpec {
    pub fn validate(&self, d: usize) -> Result<()> {
        if d < 2 {
            return Err(Error::Config(format!("hidden size must be >= 2, got {d}")));
        }
        if let Some(theta) = self.rope {
            check_rope(d, theta)?;
        }
        Ok(())
    }

    pub fn normalize(&self, x: &Matrix) -> Result<Matrix> {
        match self.norm {
            Normalization::L2 => l2_normalize(x),
            Normalization::LayerNorm => layer_norm(x),
        }
    }

    /// Maps unit-norm sampled inputs into the geometry of this spec's
    /// normalization so that the first layer's normalization is the identity
    /// (`Y⁽¹⁾ = X⁽⁰⁾`). For ℓ2 this is a no-op; for LayerNorm the rows are
    /// centered and rescaled to norm `√d`.
    pub fn prepare_inputs(&self, x: Matrix) -> Result<Matrix> {
        match self.norm {
            Normalization::L2 => Ok(x),
            Normalization::LayerNorm => layer_norm(&x),
        }
    }
}

/// Row-stochastic (post-softmax) attention weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub entries: Matrix,
    /// Whether a causal mask was applied; if so the strict upper triangle is zero.
    pub masked: bool,
}

impl ScoreMatrix {
    pub fn n(&self) -> usize {
        self.entries.rows()
    }

    /// Whether `(i, j)` (0-based) is a cell the mask lets through.
    #[inline]
    pub fn is_valid(&self, i: usize, j: usize) -> bool {
        !self.masked || j <= i
    }
}

/// Counter-based generator for one trial: the master seed selects the key
/// and the trial index selects an independent ChaCha stream.
pub fn trial_rng(master_seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(trial);
    rng
}

/// Draws `n` unit-norm rows `normalize(√α·u + √(1-α)·z_i)` where `u` and the
/// `z_i` are independent with i.i.d. `N(0, 1/d)` entries.
pub fn sample_inputs(n: usize, d: usize, alpha: Alpha, seed: u64) -> Result<EmbeddingMatrix> {
    sample_inputs_with(&mut trial_rng(seed, 0), n, d, alpha)
}

pub fn sample_inputs_with<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    d: usize,
    alpha: Alpha,
) -> Result<EmbeddingMatrix> {
    if n == 0 || d < 2 {
        return Err(Error::Config(format!(
            "sampler needs n >= 1 and d >= 2, got n = {n}, d = {d}"
        )));
    }
    let sd = 1.0 / (d as f64).sqrt();
    let shared_weight = alpha.value().sqrt();
    let noise_weight = (1.0 - alpha.value()).sqrt();

    let shared: Vec<f64> = (0..d)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * sd)
        .collect();
    let mut x = Matrix::zeros(n, d);
    for i in 0..n {
        for (v, u) in x.row_mut(i).iter_mut().zip(&shared) {
            let z: f64 = rng.sample(StandardNormal);
            *v = shared_weight * u + noise_weight * z * sd;
        }
    }
    l2_normalize(&x)
}

pub fn l2_normalize(x: &Matrix) -> Result<Matrix> {
    let mut out = x.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let r = norm(row);
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::DegenerateRow {
                row: i,
                what: "zero or non-finite norm",
            });
        }
        row.iter_mut().for_each(|v| *v /= r);
    }
    Ok(out)
}

pub fn layer_norm(x: &Matrix) -> Result<Matrix> {
    let d = x.cols();
    let target = (d as f64).sqrt();
    let mut out = x.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let mean = row.iter().sum::<f64>() / d as f64;
        row.iter_mut().for_each(|v| *v -= mean);
        let r = norm(row);
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::DegenerateRow {
                row: i,
                what: "zero variance",
            });
        }
        let k = target / r;
        row.iter_mut().for_each(|v| *v *= k);
    }
    Ok(out)
}

fn check_rope(d: usize, theta: f64) -> Result<()> {
    if !d.is_multiple_of(2) {
        return Err(Error::Config(format!("RoPE needs an even hidden size, got {d}")));
    }
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::Config(format!("RoPE base must be positive, got {theta}")));
    }
    Ok(())
}

/// Rotates one vector at position `m` (0-based) in place.
pub fn rope_rotate(row: &mut [f64], m: usize, theta: f64) {
    let d = row.len();
    for (k, pair) in row.chunks_exact_mut(2).enumerate() {
        let freq = theta.powf(-2.0 * k as f64 / d as f64);
        let (sin, cos) = (m as f64 * freq).sin_cos();
        let (a, b) = (pair[0], pair[1]);
        pair[0] = a * cos - b * sin;
        pair[1] = a * sin + b * cos;
    }
}

/// Rotates coordinate pairs `(2k, 2k+1)` of row `i` by `i · θ^(-2k/d)`.
pub fn apply_rope(y: &Matrix, theta: f64) -> Result<Matrix> {
    check_rope(y.cols(), theta)?;
    let mut out = y.clone();
    for m in 0..out.rows() {
        rope_rotate(out.row_mut(m), m, theta);
    }
    Ok(out)
}

/// Pre-softmax scores `Q Qᵀ / scale`, where `Q` is the (possibly rotated)
/// normalized hidden state. Masked cells are left as computed.
pub fn score_logits(q: &Matrix, scale: ScoreScale) -> Matrix {
    let divisor = scale.divisor(q.cols());
    let mut logits = q.gram();
    if divisor != 1.0 {
        logits.as_mut_slice().iter_mut().for_each(|v| *v /= divisor);
    }
    logits
}

/// Row softmax over the cells the mask lets through; masked cells become exactly 0.
pub fn masked_softmax(logits: &Matrix, mask: Mask) -> ScoreMatrix {
    let n = logits.rows();
    let masked = mask == Mask::Causal;
    let mut out = Matrix::zeros(n, logits.cols());
    for i in 0..n {
        let visible = if masked { i + 1 } else { logits.cols() };
        let src = &logits.row(i)[..visible];
        let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let dst = &mut out.row_mut(i)[..visible];
        let mut total = 0.0;
        for (o, &s) in dst.iter_mut().zip(src) {
            *o = (s - max).exp();
            total += *o;
        }
        dst.iter_mut().for_each(|v| *v /= total);
    }
    ScoreMatrix {
        entries: out,
        masked,
    }
}

/// Attention weights for an already normalized (and, if configured, already
/// rotated) hidden state.
pub fn attention_scores(y: &Matrix, spec: &LayerSpec) -> ScoreMatrix {
    masked_softmax(&score_logits(y, spec.score_scale), spec.mask)
}

/// Everything one layer computes, kept for statistics.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    /// Output hidden state `A Y (+ X)`.
    pub hidden: Matrix,
    pub attention: ScoreMatrix,
    /// Pre-softmax, pre-mask scores.
    pub logits: Matrix,
    /// Gram matrix of the normalized, un-rotated layer input.
    pub gram: Matrix,
}

pub fn decoder_layer_trace(x: &Matrix, spec: &LayerSpec) -> Result<LayerTrace> {
    spec.validate(x.cols())?;
    let y = spec.normalize(x)?;
    let gram = y.gram();
    let logits = match spec.rope {
        Some(theta) => score_logits(&apply_rope(&y, theta)?, spec.score_scale),
        None => {
            let divisor = spec.score_scale.divisor(y.cols());
            gram.map(|v| v / divisor)
        }
    };
    let attention = masked_softmax(&logits, spec.mask);
    // value path uses the un-rotated Y
    let mixed = attention.entries.matmul(&y)?;
    let hidden = if spec.residual { mixed.add(x)? } else { mixed };
    Ok(LayerTrace {
        hidden,
        attention,
        logits,
        gram,
    })
}

pub fn decoder_layer(x: &Matrix, spec: &LayerSpec) -> Result<(Matrix, ScoreMatrix)> {
    let trace = decoder_layer_trace(x, spec)?;
    Ok((trace.hidden, trace.attention))
}

pub fn forward_trace(x0: &Matrix, spec: &LayerSpec, layers: usize) -> Result<Vec<LayerTrace>> {
    if layers == 0 {
        return Err(Error::Config("forward needs at least one layer".into()));
    }
    let mut traces: Vec<LayerTrace> = Vec::with_capacity(layers);
    for _ in 0..layers {
        let input = traces.last().map_or(x0, |t| &t.hidden);
        let trace = decoder_layer_trace(input, spec)?;
        traces.push(trace);
    }
    Ok(traces)
}

/// Per-layer attention matrices `A⁽¹⁾ … A⁽ˡᵃʸᵉʳˢ⁾`.
pub fn forward(x0: &Matrix, spec: &LayerSpec, layers: usize) -> Result<Vec<ScoreMatrix>> {
    Ok(forward_trace(x0, spec, layers)?
        .into_iter()
        .map(|t| t.attention)
        .collect())
}

/// Normalized Gram of a hidden state, i.e. cosine similarities between rows.
pub fn normalized_gram(x: &Matrix) -> Result<Matrix> {
    Ok(l2_normalize(x)?.gram())
}

/// Inner product of rows `a` and `b` after rotating them to positions `ma` and `mb`.
pub fn rotated_inner(a: &[f64], ma: usize, b: &[f64], mb: usize, theta: f64) -> f64 {
    let mut ra = a.to_vec();
    let mut rb = b.to_vec();
    rope_rotate(&mut ra, ma, theta);
    rope_rotate(&mut rb, mb, theta);
    dot(&ra, &rb)
}
