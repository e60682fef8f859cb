//! A numerical laboratory for the positional signal a causal attention mask
//! injects into a Transformer that has no positional encoding, no parameters
//! and no feed-forward blocks.
//!
//! * [`analytic`]: closed forms for the first two layers of an ℓ2-normalized stack.
//! * [`simulation`]: the parameter-free forward pass and its variants
//!   (LayerNorm, score scaling, residual on/off, RoPE, unmasked control).
//! * [`experiments`]: deterministic Monte Carlo over sampled inputs, diagonal
//!   normalization, comparison against the closed forms, quantile clipping.
//! * [`io`]: CSV, PGM and manifest formats.

pub mod analytic;
pub mod error;
pub mod experiments;
pub mod io;
pub mod matrix;
pub mod simulation;
pub mod stats;

pub use analytic::{analytic_gram, Alpha, AnalyticGram, PositionIndex};
pub use error::{Error, Result};
pub use experiments::{
    run_experiment, run_experiment_with_workers, AttentionStats, ComparisonReport,
    ExperimentSpec, ExperimentStats, LayerStats, Mode, ToleranceRule,
};
pub use matrix::{EmbeddingMatrix, Matrix};
pub use simulation::{LayerSpec, Mask, Normalization, ScoreMatrix, ScoreScale};
