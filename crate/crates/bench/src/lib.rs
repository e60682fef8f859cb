//! Fixtures shared by the benchmarks.

use maskpos_core::{Alpha, ExperimentSpec, Matrix, Mode};

/// Desk-scale experiment with `trials` trials.
pub fn desk_spec(mode: Mode, trials: u64) -> ExperimentSpec {
    ExperimentSpec {
        trials,
        ..ExperimentSpec::desk(mode, Alpha::ZERO)
    }
}

pub fn inputs(n: usize, d: usize, seed: u64) -> Matrix {
    maskpos_core::simulation::sample_inputs(n, d, Alpha::ZERO, seed)
        .expect("sampler accepts n >= 1, d >= 2")
}
