use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::BoundReport;
use crate::binning::{assign_bins, BinningScheme};
use crate::error::{Error, Result};
use crate::kernels::{ess, normalize_from_sq_dists, sq_dist, KernelConfig};
use crate::metrics::{kernel_estimates, local_errors, LceVariant};

/// Anchor averages of the two data-dependent terms, combined across classes
/// with the same renormalized priors as the class-wise LCE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theorem3Terms {
    /// Mean of `sqrt(2 ln(n / delta) / n_eff)`.
    pub variance_term: f64,
    /// Mean of `sum_j w_ij |phi_i - phi_j|_1`, with `L = 1`.
    pub bias_term: f64,
    pub anchors: usize,
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

pub fn theorem3_terms(
    probs: ArrayView2<f64>,
    labels: &[usize],
    features: ArrayView2<f64>,
    scheme: &BinningScheme,
    kernel: &KernelConfig,
    priors: &[f64],
    delta: f64,
) -> Result<Theorem3Terms> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidDelta(delta));
    }
    let n = labels.len();
    let log_term = 2.0 * (n as f64 / delta).ln();
    let stats = assign_bins(probs, labels, scheme, priors)
        .map_err(|_| Error::NoRetainedBins { min_bin_size: scheme.min_bin_size })?;
    let rows: Vec<Vec<f64>> = features.rows().into_iter().map(|r| r.to_vec()).collect();
    let mut var = 0.0;
    let mut bias = 0.0;
    let mut mass = 0.0;
    let mut anchors = 0;
    for (cb, &pi) in stats.per_class.iter().zip(&stats.class_weights) {
        let per_anchor: Vec<(f64, f64)> = cb
            .bins
            .iter()
            .flat_map(|bin| {
                let rows = &rows;
                bin.members.par_iter().filter_map(move |&i| {
                    let others: Vec<usize> =
                        bin.members.iter().copied().filter(|&j| !(kernel.exclude_self && j == i)).collect();
                    if others.is_empty() {
                        return None;
                    }
                    let mut w: Vec<f64> = others.iter().map(|&j| sq_dist(&rows[i], &rows[j])).collect();
                    normalize_from_sq_dists(kernel, &mut w);
                    let b: f64 = others.iter().zip(&w).map(|(&j, wj)| wj * l1(&rows[i], &rows[j])).sum();
                    Some(((log_term / ess(&w)).sqrt(), b))
                })
                .collect::<Vec<_>>()
            })
            .collect();
        if per_anchor.is_empty() {
            continue;
        }
        let k = per_anchor.len() as f64;
        var += pi * per_anchor.iter().map(|p| p.0).sum::<f64>() / k;
        bias += pi * per_anchor.iter().map(|p| p.1).sum::<f64>() / k;
        mass += pi;
        anchors += per_anchor.len();
    }
    if anchors == 0 || !(mass > 0.0) {
        return Err(Error::NoRetainedBins {
            min_bin_size: scheme.min_bin_size,
        });
    }
    Ok(Theorem3Terms {
        variance_term: var / mass,
        bias_term: bias / mass,
        anchors,
    })
}

/// Class-wise LCE against `k [eps + variance + bias]` with `k` the largest
/// prior. Without `epsilon`, it is estimated as `max_i |p_i - theta_i|_1` on
/// the data itself.
#[allow(clippy::too_many_arguments)]
pub fn verify_theorem3(
    probs: ArrayView2<f64>,
    labels: &[usize],
    features: ArrayView2<f64>,
    priors: &[f64],
    epsilon: Option<f64>,
    kernel: &KernelConfig,
    delta: f64,
    scheme: &BinningScheme,
    seed: u64,
) -> Result<BoundReport> {
    let c = probs.ncols();
    let eps = match epsilon {
        Some(e) if e >= 0.0 => e,
        Some(e) => return Err(Error::InvalidArgument(format!("epsilon must be nonnegative, got {e}"))),
        None => estimate_epsilon(probs, labels, features, kernel.gamma)?,
    };
    let observed = local_errors(probs, labels, features, scheme, kernel, priors, LceVariant::ClasswiseScalar)?.lce;
    let terms = theorem3_terms(probs, labels, features, scheme, kernel, priors, delta)?;
    let k = priors.iter().copied().fold(1.0 / c as f64, f64::max);
    let bound = k * (eps + terms.variance_term + terms.bias_term);
    Ok(BoundReport {
        observed,
        bound,
        epsilon_term: k * eps,
        variance_term: k * terms.variance_term,
        bias_term: k * terms.bias_term,
        epsilon: eps,
        delta,
        seed,
        n: labels.len(),
        classes: c,
        bins: scheme.bins,
        gamma: Some(kernel.gamma),
        holds: observed <= bound,
    })
}

/// `max_i |p_i - theta_i|_1` with self-excluded kernel estimates at `gamma`.
pub fn estimate_epsilon(probs: ArrayView2<f64>, labels: &[usize], features: ArrayView2<f64>, gamma: f64) -> Result<f64> {
    let kernel = KernelConfig::new(gamma, true)?;
    let theta = kernel_estimates(features, labels, probs.ncols(), &kernel)?;
    Ok(probs
        .rows()
        .into_iter()
        .zip(theta.rows())
        .map(|(p, t)| p.iter().zip(t.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>())
        .fold(0.0, f64::max))
}

/// Theorem 3 terms for each bandwidth on a fixed dataset.
#[allow(clippy::too_many_arguments)]
pub fn gamma_sweep(
    probs: ArrayView2<f64>,
    labels: &[usize],
    features: ArrayView2<f64>,
    scheme: &BinningScheme,
    priors: &[f64],
    gammas: &[f64],
    exclude_self: bool,
    delta: f64,
) -> Result<Vec<(f64, Theorem3Terms)>> {
    gammas
        .iter()
        .map(|&g| {
            let kernel = KernelConfig::new(g, exclude_self)?;
            Ok((g, theorem3_terms(probs, labels, features, scheme, &kernel, priors, delta)?))
        })
        .collect()
}
