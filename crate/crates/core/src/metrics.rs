//! Class-wise ECE and ECCE, kernel-based LCE and MLCE, NLL, accuracy, and
//! local-calibration diagnostics.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::binning::{assign_bins, equal_width_index, generic_metric, BinningScheme, Comparator};
use crate::error::{Error, Result};
use crate::kernels::{normalize_from_sq_dists, KernelConfig};

pub const NLL_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LceVariant {
    /// Per class: bin by `f_c`, scalar deviation per anchor, prior-weighted.
    ClasswiseScalar,
    /// Bin by max-class confidence, l1 deviation over all classes, 1/C prefactor.
    VectorL1,
}

pub fn classwise_ece(probs: ArrayView2<f64>, labels: &[usize], scheme: &BinningScheme, priors: &[f64]) -> Result<f64> {
    let stats = assign_bins(probs, labels, scheme, priors)?;
    Ok(generic_metric(&stats, Comparator::AbsDiff))
}

/// Unweighted per-class ECE values (classes without retained bins report 0).
pub fn classwise_ece_per_class(
    probs: ArrayView2<f64>,
    labels: &[usize],
    scheme: &BinningScheme,
    priors: &[f64],
) -> Result<Vec<f64>> {
    let stats = assign_bins(probs, labels, scheme, priors)?;
    Ok(stats
        .per_class
        .iter()
        .map(|cb| cb.bins.iter().map(|b| b.weight * (b.freq - b.conf).abs()).sum())
        .collect())
}

fn ecce_parts(probs: ArrayView2<f64>, labels: &[usize], scheme: &BinningScheme, priors: &[f64]) -> Result<(f64, Vec<f64>)> {
    let stats = assign_bins(probs, labels, scheme, priors)?;
    let mut total = 0.0;
    let mut per_class = Vec::with_capacity(stats.classes());
    for (cb, &pi) in stats.per_class.iter().zip(&stats.class_weights) {
        let mut cum = 0.0;
        let mut seen = 0.0;
        let mut inner = 0.0;
        for b in &cb.bins {
            let k = b.size() as f64;
            cum += k * (b.freq - b.conf);
            seen += k;
            inner += b.weight * (cum / seen).abs();
        }
        per_class.push(inner);
        total += pi * inner;
    }
    Ok((total, per_class))
}

/// Cumulative-prefix class-wise ECCE: within each class, bin `b` contributes
/// `w_b |sum_{i<=b} sum_{j in B_i} (1{y_j=c} - f_c(x_j))| / S_b` with `S_b`
/// the number of members in bins up to `b`.
pub fn classwise_ecce(probs: ArrayView2<f64>, labels: &[usize], scheme: &BinningScheme, priors: &[f64]) -> Result<f64> {
    Ok(ecce_parts(probs, labels, scheme, priors)?.0)
}

/// LCE, MLCE and the per-class LCE values they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalErrors {
    pub lce: f64,
    pub mlce: f64,
    pub per_class: Vec<f64>,
    /// Anchors skipped because self-exclusion left them without neighbours.
    pub skipped_anchors: usize,
}

/// For each member anchor, the kernel-weighted sum of `residual` rows over
/// the other members (or all members when self is included). `None` marks an
/// anchor without neighbours.
fn weighted_residuals(
    features: ArrayView2<f64>,
    members: &[usize],
    residuals: &Array2<f64>,
    kernel: &KernelConfig,
) -> Vec<Option<Vec<f64>>> {
    let m = features.ncols();
    let k = residuals.ncols();
    let mut pts = Vec::with_capacity(members.len() * m);
    for &i in members {
        pts.extend(features.row(i).iter().copied());
    }
    (0..members.len())
        .into_par_iter()
        .map(|a| {
            let anchor = &pts[a * m..(a + 1) * m];
            let mut idx = Vec::with_capacity(members.len());
            let mut d2 = Vec::with_capacity(members.len());
            for b in 0..members.len() {
                if kernel.exclude_self && b == a {
                    continue;
                }
                let other = &pts[b * m..(b + 1) * m];
                let mut acc = 0.0;
                for t in 0..m {
                    let d = anchor[t] - other[t];
                    acc += d * d;
                }
                idx.push(b);
                d2.push(acc);
            }
            if idx.is_empty() {
                return None;
            }
            normalize_from_sq_dists(kernel, &mut d2);
            let mut out = vec![0.0; k];
            for (&b, &w) in idx.iter().zip(&d2) {
                for (o, &r) in out.iter_mut().zip(residuals.row(b)) {
                    *o += w * r;
                }
            }
            Some(out)
        })
        .collect()
}

/// LCE and MLCE together; both walk the same per-anchor deviations.
pub fn local_errors(
    probs: ArrayView2<f64>,
    labels: &[usize],
    features: ArrayView2<f64>,
    scheme: &BinningScheme,
    kernel: &KernelConfig,
    priors: &[f64],
    variant: LceVariant,
) -> Result<LocalErrors> {
    let (n, c) = probs.dim();
    if features.nrows() != n || labels.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{n} probability rows, {} feature rows, {} labels",
            features.nrows(),
            labels.len()
        )));
    }
    match variant {
        LceVariant::ClasswiseScalar => {
            let stats = assign_bins(probs, labels, scheme, priors)
                .map_err(|_| Error::NoRetainedBins { min_bin_size: scheme.min_bin_size })?;
            let mut per_class = vec![0.0; c];
            let mut live = vec![false; c];
            let mut mlce: f64 = 0.0;
            let mut skipped = 0;
            for cb in &stats.per_class {
                let class = cb.class;
                let mut sum = 0.0;
                let mut count = 0usize;
                for bin in &cb.bins {
                    let resid = Array2::from_shape_fn((bin.size(), 1), |(r, _)| {
                        let j = bin.members[r];
                        probs[[j, class]] - if labels[j] == class { 1.0 } else { 0.0 }
                    });
                    for dev in weighted_residuals(features, &bin.members, &resid, kernel) {
                        match dev {
                            Some(v) => {
                                let d = v[0].abs();
                                sum += d;
                                count += 1;
                                mlce = mlce.max(d);
                            }
                            None => skipped += 1,
                        }
                    }
                }
                if count > 0 {
                    per_class[class] = sum / count as f64;
                    live[class] = true;
                }
            }
            if !live.iter().any(|&l| l) {
                return Err(Error::NoRetainedBins {
                    min_bin_size: scheme.min_bin_size,
                });
            }
            if skipped > 0 {
                log::warn!("lce: {skipped} anchors had no neighbours and were skipped");
            }
            let mass: f64 = priors.iter().zip(&live).filter(|(_, &l)| l).map(|(p, _)| p).sum();
            let lce = if mass > 0.0 {
                per_class
                    .iter()
                    .zip(priors)
                    .zip(&live)
                    .filter(|(_, &l)| l)
                    .map(|((v, p), _)| v * p / mass)
                    .sum()
            } else {
                0.0
            };
            Ok(LocalErrors {
                lce,
                mlce,
                per_class,
                skipped_anchors: skipped,
            })
        }
        LceVariant::VectorL1 => {
            let mut groups: Vec<Vec<usize>> = vec![Vec::new(); scheme.bins.max(1)];
            for (i, row) in probs.rows().into_iter().enumerate() {
                let conf = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                groups[equal_width_index(conf, scheme.bins.max(1))].push(i);
            }
            let mut sum = 0.0;
            let mut count = 0usize;
            let mut mlce: f64 = 0.0;
            let mut skipped = 0;
            for members in groups.iter().filter(|g| !g.is_empty() && g.len() >= scheme.min_bin_size) {
                let resid = Array2::from_shape_fn((members.len(), c), |(r, k)| {
                    let j = members[r];
                    probs[[j, k]] - if labels[j] == k { 1.0 } else { 0.0 }
                });
                for dev in weighted_residuals(features, members, &resid, kernel) {
                    match dev {
                        Some(v) => {
                            let d: f64 = v.iter().map(|x| x.abs()).sum();
                            sum += d;
                            count += 1;
                            mlce = mlce.max(d);
                        }
                        None => skipped += 1,
                    }
                }
            }
            if count == 0 {
                return Err(Error::NoRetainedBins {
                    min_bin_size: scheme.min_bin_size,
                });
            }
            Ok(LocalErrors {
                lce: sum / (c as f64 * count as f64),
                mlce,
                per_class: Vec::new(),
                skipped_anchors: skipped,
            })
        }
    }
}

pub fn lce(
    probs: ArrayView2<f64>,
    labels: &[usize],
    features: ArrayView2<f64>,
    scheme: &BinningScheme,
    kernel: &KernelConfig,
    priors: &[f64],
    variant: LceVariant,
) -> Result<f64> {
    Ok(local_errors(probs, labels, features, scheme, kernel, priors, variant)?.lce)
}

pub fn mlce(
    probs: ArrayView2<f64>,
    labels: &[usize],
    features: ArrayView2<f64>,
    scheme: &BinningScheme,
    kernel: &KernelConfig,
    priors: &[f64],
    variant: LceVariant,
) -> Result<f64> {
    Ok(local_errors(probs, labels, features, scheme, kernel, priors, variant)?.mlce)
}

/// Mean negative log-likelihood with probabilities floored at 1e-12.
pub fn nll(probs: ArrayView2<f64>, labels: &[usize]) -> f64 {
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -probs[[i, y]].max(NLL_FLOOR).ln())
        .sum();
    total / labels.len() as f64
}

/// Row argmax, lowest index on ties.
pub fn argmax(row: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (k, v) in row.into_iter().enumerate() {
        if v > best_v {
            best = k;
            best_v = v;
        }
    }
    best
}

pub fn accuracy(probs: ArrayView2<f64>, labels: &[usize]) -> f64 {
    let hits = probs
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &y)| argmax(row.iter().copied()) == y)
        .count();
    hits as f64 / labels.len() as f64
}

/// Largest column l1 norm of a last-layer weight matrix; `None` means the
/// kernel runs on the logits themselves, where the constant is 1.
pub fn softmax_lipschitz(w: Option<ArrayView2<f64>>) -> f64 {
    match w {
        None => 1.0,
        Some(w) => w
            .columns()
            .into_iter()
            .map(|col| col.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max),
    }
}

/// Nadaraya-Watson estimate of the one-hot labels at every row, using every
/// other row (or every row, when self is included) as a neighbour.
pub fn kernel_estimates(
    features: ArrayView2<f64>,
    labels: &[usize],
    classes: usize,
    kernel: &KernelConfig,
) -> Result<Array2<f64>> {
    let n = labels.len();
    let members: Vec<usize> = (0..n).collect();
    let onehot = Array2::from_shape_fn((n, classes), |(i, k)| if labels[i] == k { 1.0 } else { 0.0 });
    let rows = weighted_residuals(features, &members, &onehot, kernel);
    let mut out = Array2::zeros((n, classes));
    for (i, r) in rows.into_iter().enumerate() {
        let r = r.ok_or(Error::NoNeighbors { anchor: i })?;
        for (k, v) in r.into_iter().enumerate() {
            out[[i, k]] = v;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoCheck {
    pub rho: f64,
    pub lipschitz: f64,
    pub violations: usize,
    pub max_abs_deviation: f64,
}

/// Counts `(i, c)` with `|p_ic - theta_c(x_i)| > L rho`.
pub fn rho_check(
    probs: ArrayView2<f64>,
    features: ArrayView2<f64>,
    labels: &[usize],
    kernel: &KernelConfig,
    rho: f64,
    lipschitz: f64,
) -> Result<RhoCheck> {
    let theta = kernel_estimates(features, labels, probs.ncols(), kernel)?;
    Ok(rho_check_against(probs, theta.view(), rho, lipschitz))
}

pub fn rho_check_against(probs: ArrayView2<f64>, theta: ArrayView2<f64>, rho: f64, lipschitz: f64) -> RhoCheck {
    let limit = lipschitz * rho;
    let mut violations = 0;
    let mut max_dev: f64 = 0.0;
    for (p, t) in probs.iter().zip(theta.iter()) {
        let d = (p - t).abs();
        max_dev = max_dev.max(d);
        if d > limit {
            violations += 1;
        }
    }
    RhoCheck {
        rho,
        lipschitz,
        violations,
        max_abs_deviation: max_dev,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorSource {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub bins: usize,
    /// Minimum bin size for LCE and MLCE; ECE and ECCE only drop empty bins.
    pub min_bin_size: usize,
    pub kernel: KernelConfig,
    pub variant: LceVariant,
    pub prior_source: PriorSource,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            bins: 15,
            min_bin_size: 20,
            kernel: KernelConfig::default(),
            variant: LceVariant::ClasswiseScalar,
            prior_source: PriorSource::Train,
        }
    }
}

impl MetricConfig {
    pub fn fingerprint(&self) -> String {
        format!(
            "bins={};min_bin={};gamma={};exclude_self={};variant={};priors={};lce_binning={}",
            self.bins,
            self.min_bin_size,
            self.kernel.gamma,
            self.kernel.exclude_self,
            match self.variant {
                LceVariant::ClasswiseScalar => "classwise",
                LceVariant::VectorL1 => "vector",
            },
            match self.prior_source {
                PriorSource::Train => "train",
                PriorSource::Eval => "eval",
            },
            match self.variant {
                LceVariant::ClasswiseScalar => "per_class_confidence",
                LceVariant::VectorL1 => "max_class_confidence",
            }
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub ece: f64,
    pub ecce: f64,
    pub lce: f64,
    pub mlce: f64,
    pub nll: f64,
    pub acc: f64,
    pub config: MetricConfig,
    pub per_class_ece: Vec<f64>,
    pub per_class_ecce: Vec<f64>,
    pub per_class_lce: Vec<f64>,
}

/// Round to `digits` significant digits by formatting and reparsing.
pub fn round_sig(v: f64, digits: usize) -> f64 {
    if !v.is_finite() || v == 0.0 {
        return v;
    }
    format!("{:.*e}", digits - 1, v).parse().unwrap_or(v)
}

impl MetricReport {
    pub fn to_json(&self, include_per_class: bool) -> Value {
        let r = |v: f64| round_sig(v, 12);
        let rv = |v: &[f64]| v.iter().map(|&x| r(x)).collect::<Vec<_>>();
        let mut out = json!({
            "ece": r(self.ece),
            "ecce": r(self.ecce),
            "lce": r(self.lce),
            "mlce": r(self.mlce),
            "nll": r(self.nll),
            "acc": r(self.acc),
            "config": {
                "bins": self.config.bins,
                "min_bin_size": self.config.min_bin_size,
                "gamma": self.config.kernel.gamma,
                "exclude_self": self.config.kernel.exclude_self,
                "variant": self.config.variant,
                "priors": self.config.prior_source,
                "fingerprint": self.config.fingerprint(),
            },
        });
        if include_per_class {
            out["per_class"] = json!({
                "ece": rv(&self.per_class_ece),
                "ecce": rv(&self.per_class_ecce),
                "lce": rv(&self.per_class_lce),
            });
        }
        out
    }
}

/// All six metrics. Kernel metrics run on `features`.
pub fn evaluate(
    probs: ArrayView2<f64>,
    labels: &[usize],
    features: ArrayView2<f64>,
    priors: &[f64],
    cfg: &MetricConfig,
) -> Result<MetricReport> {
    let global = BinningScheme::equal_width(cfg.bins, 0);
    let local = BinningScheme::equal_width(cfg.bins, cfg.min_bin_size);
    let ece = classwise_ece(probs, labels, &global, priors)?;
    let per_class_ece = classwise_ece_per_class(probs, labels, &global, priors)?;
    let (ecce, per_class_ecce) = ecce_parts(probs, labels, &global, priors)?;
    let loc = local_errors(probs, labels, features, &local, &cfg.kernel, priors, cfg.variant)?;
    Ok(MetricReport {
        ece,
        ecce,
        lce: loc.lce,
        mlce: loc.mlce,
        nll: nll(probs, labels),
        acc: accuracy(probs, labels),
        config: cfg.clone(),
        per_class_ece,
        per_class_ecce,
        per_class_lce: loc.per_class,
    })
}
