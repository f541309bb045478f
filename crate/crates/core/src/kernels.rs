//! Gaussian kernel and the normalized Nadaraya-Watson estimator.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gaussian kernel `exp(-|a-b|^2 / (2 gamma^2))` on Euclidean distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub gamma: f64,
    pub exclude_self: bool,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            gamma: 10.0,
            exclude_self: true,
        }
    }
}

impl KernelConfig {
    pub fn new(gamma: f64, exclude_self: bool) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidArgument(format!("bandwidth must be positive, got {gamma}")));
        }
        Ok(Self { gamma, exclude_self })
    }

    fn log_kernel(&self, sq_dist: f64) -> f64 {
        -sq_dist / (2.0 * self.gamma * self.gamma)
    }
}

/// Normalized weights of one anchor over its neighbours.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelWeights {
    pub anchor: usize,
    pub neighbors: Vec<usize>,
    pub weights: Vec<f64>,
}

/// Squared Euclidean distance, summed in index order.
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

pub fn kernel_value(cfg: &KernelConfig, a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(cfg.log_kernel(sq_dist(a, b)).exp())
}

/// Turns squared distances into normalized weights, in place. The kernel is
/// evaluated as `exp(log k - max log k)` so far-away neighbourhoods do not
/// underflow to an all-zero normalizer.
pub fn normalize_from_sq_dists(cfg: &KernelConfig, d2: &mut [f64]) {
    let min = d2.iter().copied().fold(f64::INFINITY, f64::min);
    let mut total = 0.0;
    for v in d2.iter_mut() {
        *v = cfg.log_kernel(*v - min).exp();
        total += *v;
    }
    for v in d2.iter_mut() {
        *v /= total;
    }
}

/// Weights of row `anchor` of `points` over the rows listed in `candidates`,
/// dropping the anchor itself when the config excludes self.
pub fn kernel_weights(
    cfg: &KernelConfig,
    points: ArrayView2<f64>,
    anchor: usize,
    candidates: &[usize],
) -> Result<KernelWeights> {
    let a = points.row(anchor);
    let a = a.as_slice().map(|s| s.to_vec()).unwrap_or_else(|| a.to_vec());
    let neighbors: Vec<usize> = candidates
        .iter()
        .copied()
        .filter(|&j| !(cfg.exclude_self && j == anchor))
        .collect();
    if neighbors.is_empty() {
        return Err(Error::NoNeighbors { anchor });
    }
    let mut w: Vec<f64> = neighbors
        .iter()
        .map(|&j| {
            let r = points.row(j);
            r.iter().zip(&a).map(|(x, y)| (x - y) * (x - y)).sum()
        })
        .collect();
    normalize_from_sq_dists(cfg, &mut w);
    Ok(KernelWeights {
        anchor,
        neighbors,
        weights: w,
    })
}

/// Nadaraya-Watson estimate at `anchor`: kernel-weighted mean of the target
/// rows of every neighbour row given. Self-exclusion is the caller's job here
/// since the anchor is not identified among `neighbors`.
pub fn nw_estimate(
    cfg: &KernelConfig,
    anchor: &[f64],
    neighbors: ArrayView2<f64>,
    targets: ArrayView2<f64>,
) -> Result<Vec<f64>> {
    if neighbors.nrows() == 0 {
        return Err(Error::NoNeighbors { anchor: 0 });
    }
    if neighbors.nrows() != targets.nrows() {
        return Err(Error::DimensionMismatch {
            left: neighbors.nrows(),
            right: targets.nrows(),
        });
    }
    if neighbors.ncols() != anchor.len() {
        return Err(Error::DimensionMismatch {
            left: anchor.len(),
            right: neighbors.ncols(),
        });
    }
    let mut w: Vec<f64> = neighbors
        .rows()
        .into_iter()
        .map(|r| r.iter().zip(anchor).map(|(x, y)| (x - y) * (x - y)).sum())
        .collect();
    normalize_from_sq_dists(cfg, &mut w);
    let mut out = vec![0.0; targets.ncols()];
    for (wj, t) in w.iter().zip(targets.rows()) {
        for (o, &v) in out.iter_mut().zip(t) {
            *o += wj * v;
        }
    }
    Ok(out)
}

/// `1 / sum w^2`.
pub fn effective_sample_size(w: &KernelWeights) -> f64 {
    ess(&w.weights)
}

pub fn ess(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}
