//! Closed forms for a parameter-free, ℓ2-normalized causal attention stack
//! fed with unit-norm inputs whose pairwise inner products equal `alpha`.
//!
//! Positions are 1-based throughout this module. With Gram entries `1` on the
//! diagonal and `alpha` elsewhere, the first layer's output at position `i` is
//! a fixed mixture of inputs `1..=i`, which gives
//!
//! * `g(i)`: the inner product of first-layer outputs at `i > j` (independent of `j`),
//! * `h(i)`: the norm of the first-layer output at `i`,
//!
//! and the second layer's normalized inner product `g(max(i, j)) / (h(i) h(j))`.
//! The `_nores` variants describe the same stack with the residual branch removed.

use std::f64::consts::E;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Expected inner product between distinct unit-norm inputs, in `[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Alpha(f64);

impl Alpha {
    pub const ZERO: Alpha = Alpha(0.0);

    pub fn new(value: f64) -> Result<Self> {
        if (0.0..1.0).contains(&value) {
            Ok(Alpha(value))
        } else {
            Err(Error::Domain(format!("alpha must lie in [0, 1), got {value}")))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Alpha {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Alpha::new(value)
    }
}

/// 1-based token position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PositionIndex(usize);

impl PositionIndex {
    pub fn new(value: usize) -> Result<Self> {
        if value == 0 {
            Err(Error::Domain("positions are 1-based".into()))
        } else {
            Ok(PositionIndex(value))
        }
    }

    /// Converts a 0-based storage index.
    #[inline]
    pub fn from_zero_based(index: usize) -> Self {
        PositionIndex(index + 1)
    }

    #[inline]
    pub fn get(self) -> usize {
        self.0
    }

    #[inline]
    pub fn zero_based(self) -> usize {
        self.0 - 1
    }
}

/// Normalizing constant of row `i` of the first-layer softmax: `e + (i-1)e^α`.
#[inline]
fn row_partition(i: f64, a: f64) -> f64 {
    E + (i - 1.0) * a.exp()
}

/// First-layer softmax weight of key `j` for query `i`. Masked keys (`j > i`)
/// get exactly zero.
pub fn softmax_weight(i: PositionIndex, j: PositionIndex, alpha: Alpha) -> f64 {
    let a = alpha.value();
    let numerator = match i.cmp(&j) {
        std::cmp::Ordering::Less => return 0.0,
        std::cmp::Ordering::Equal => E,
        std::cmp::Ordering::Greater => a.exp(),
    };
    numerator / row_partition(i.get() as f64, a)
}

/// Inner product of first-layer outputs at positions `i > j`; defined for `i >= 2`.
pub fn g(i: PositionIndex, alpha: Alpha) -> Result<f64> {
    if i.get() < 2 {
        return Err(Error::Domain(format!("g is defined for i >= 2, got i = {}", i.get())));
    }
    let (i, a) = (i.get() as f64, alpha.value());
    let numerator = 2.0 * (2.0 * a * E + a.exp() * (1.0 + a * (2.0 * i - 3.0)));
    Ok(numerator / row_partition(i, a))
}

/// Norm of the first-layer output at position `i`.
pub fn h(i: PositionIndex, alpha: Alpha) -> f64 {
    let (i, a) = (i.get() as f64, alpha.value());
    let ea = a.exp();
    let self_coeff = 2.0 * E + (i - 1.0) * ea;
    let numerator = self_coeff * self_coeff
        + 2.0 * self_coeff * ea * a * (i - 1.0)
        + ea * ea * (i - 1.0) * (1.0 + (i - 2.0) * a);
    let z = row_partition(i, a);
    (numerator / (z * z)).sqrt()
}

/// Normalized second-layer inner product `⟨y_i, y_j⟩` with residual connections.
pub fn layer2_inner(i: PositionIndex, j: PositionIndex, alpha: Alpha) -> f64 {
    if i == j {
        return 1.0;
    }
    let hi = h(i, alpha);
    let hj = h(j, alpha);
    // max(i, j) >= 2 whenever i != j
    let cross = g(i.max(j), alpha).expect("max(i, j) >= 2");
    cross / (hi * hj)
}

/// Residual-free analogue of [`g`]; defined for `i >= 2`.
pub fn g_nores(i: PositionIndex, alpha: Alpha) -> Result<f64> {
    if i.get() < 2 {
        return Err(Error::Domain(format!(
            "g_nores is defined for i >= 2, got i = {}",
            i.get()
        )));
    }
    let (i, a) = (i.get() as f64, alpha.value());
    Ok((E * a + a.exp() * (1.0 + a * (i - 2.0))) / row_partition(i, a))
}

/// Residual-free analogue of [`h`].
pub fn h_nores(i: PositionIndex, alpha: Alpha) -> f64 {
    let (i, a) = (i.get() as f64, alpha.value());
    let ea = a.exp();
    let numerator =
        E * E + 2.0 * E * ea * a * (i - 1.0) + ea * ea * (i - 1.0) * (1.0 + a * (i - 2.0));
    let z = row_partition(i, a);
    (numerator / (z * z)).sqrt()
}

/// Residual-free analogue of [`layer2_inner`], composed the same way.
pub fn layer2_inner_nores(i: PositionIndex, j: PositionIndex, alpha: Alpha) -> f64 {
    if i == j {
        return 1.0;
    }
    let cross = g_nores(i.max(j), alpha).expect("max(i, j) >= 2");
    cross / (h_nores(i, alpha) * h_nores(j, alpha))
}

/// Predicted second-layer normalized Gram matrix for `n` positions.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticGram {
    pub n: usize,
    pub alpha: Alpha,
    pub residual: bool,
    /// 0-based storage; `entries[(i-1, j-1)]` holds the value for positions `(i, j)`.
    pub entries: Matrix,
}

pub fn analytic_gram(n: usize, alpha: Alpha, residual: bool) -> Result<AnalyticGram> {
    if n == 0 {
        return Err(Error::Domain("analytic_gram needs n >= 1".into()));
    }
    let inner = if residual {
        layer2_inner
    } else {
        layer2_inner_nores
    };
    let entries = Matrix::from_fn(n, n, |r, c| {
        inner(
            PositionIndex::from_zero_based(r),
            PositionIndex::from_zero_based(c),
            alpha,
        )
    });
    Ok(AnalyticGram {
        n,
        alpha,
        residual,
        entries,
    })
}

/// Whether `h` (or `h_nores`) is strictly decreasing on positions `1..=n_max`.
pub fn check_h_monotone(alpha: Alpha, n_max: usize, residual: bool) -> Result<bool> {
    if n_max < 2 {
        return Err(Error::Domain(format!("n_max must be >= 2, got {n_max}")));
    }
    let norm = if residual { h } else { h_nores };
    let values: Vec<f64> = (1..=n_max)
        .map(|i| norm(PositionIndex(i), alpha))
        .collect();
    Ok(values.windows(2).all(|w| w[1] < w[0]))
}
