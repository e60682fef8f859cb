//! Streaming per-cell mean and variance for matrices.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Welford accumulator over same-shaped matrices, one running mean/M2 per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixWelford {
    count: u64,
    mean: Matrix,
    m2: Matrix,
}

impl MatrixWelford {
    pub fn new(rows: usize, cols: usize) -> Self {
        MatrixWelford {
            count: 0,
            mean: Matrix::zeros(rows, cols),
            m2: Matrix::zeros(rows, cols),
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn push(&mut self, sample: &Matrix) -> Result<()> {
        if sample.shape() != self.mean.shape() {
            return Err(Error::DimensionMismatch {
                expected: format!("{:?}", self.mean.shape()),
                found: format!("{:?}", sample.shape()),
            });
        }
        self.count += 1;
        let k = self.count as f64;
        let cells = self
            .mean
            .as_mut_slice()
            .iter_mut()
            .zip(self.m2.as_mut_slice())
            .zip(sample.as_slice());
        for ((mean, m2), &x) in cells {
            let delta = x - *mean;
            *mean += delta / k;
            *m2 += delta * (x - *mean);
        }
        Ok(())
    }

    /// Folds `other` into `self` (Chan et al. pairwise update). Merging the same
    /// sequence of accumulators in the same order is bit-reproducible.
    pub fn merge(&mut self, other: &MatrixWelford) -> Result<()> {
        if other.mean.shape() != self.mean.shape() {
            return Err(Error::DimensionMismatch {
                expected: format!("{:?}", self.mean.shape()),
                found: format!("{:?}", other.mean.shape()),
            });
        }
        if other.count == 0 {
            return Ok(());
        }
        if self.count == 0 {
            *self = other.clone();
            return Ok(());
        }
        let na = self.count as f64;
        let nb = other.count as f64;
        let total = na + nb;
        let cells = self
            .mean
            .as_mut_slice()
            .iter_mut()
            .zip(self.m2.as_mut_slice())
            .zip(other.mean.as_slice().iter().zip(other.m2.as_slice()));
        for ((mean, m2), (&mean_b, &m2_b)) in cells {
            let delta = mean_b - *mean;
            *mean += delta * nb / total;
            *m2 += m2_b + delta * delta * na * nb / total;
        }
        self.count += other.count;
        Ok(())
    }

    pub fn mean(&self) -> &Matrix {
        &self.mean
    }

    /// Unbiased sample variance per cell; zero with fewer than two samples.
    pub fn variance(&self) -> Matrix {
        if self.count < 2 {
            return Matrix::zeros(self.mean.rows(), self.mean.cols());
        }
        let denom = (self.count - 1) as f64;
        self.m2.map(|m2| m2.max(0.0) / denom)
    }

    /// Standard error of the mean per cell.
    pub fn stderr(&self) -> Matrix {
        let n = self.count.max(1) as f64;
        self.variance().map(|v| (v / n).sqrt())
    }
}
