use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binning::equal_width_index;
use crate::error::{Error, Result};
use crate::kernels::sq_dist;

/// Mean Euclidean distance from each row to its `k` nearest other rows;
/// equal distances are ordered by row index.
pub fn proximity_scores(features: ArrayView2<f64>, k: usize) -> Result<Vec<f64>> {
    let n = features.nrows();
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if n <= k {
        return Err(Error::KTooLarge { k, n });
    }
    let rows: Vec<Vec<f64>> = features.rows().into_iter().map(|r| r.to_vec()).collect();
    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let mut d: Vec<(f64, usize)> =
                (0..n).filter(|&j| j != i).map(|j| (sq_dist(&rows[i], &rows[j]), j)).collect();
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            d.select_nth_unstable_by(k - 1, cmp);
            let mut near = d[..k].to_vec();
            near.sort_by(cmp);
            near.iter().map(|(s, _)| s.sqrt()).sum::<f64>() / k as f64
        })
        .collect())
}

/// One confidence bin split at the median proximity score into a dense half
/// `S1` and a sparse half `S2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubBinPair {
    pub bin: usize,
    pub size_dense: usize,
    pub size_sparse: usize,
    /// `|freq(S1) - freq(S2)|_1`.
    pub freq_gap: f64,
    /// `|conf(S1) - conf(S2)|_1`.
    pub conf_gap: f64,
    pub hoeffding_term: f64,
    pub epsilon_term: f64,
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProximityReport {
    pub k: usize,
    pub delta: f64,
    pub epsilon: f64,
    pub scores: Vec<f64>,
    pub pairs: Vec<SubBinPair>,
    /// Occupied bins whose halves fall below the minimum size.
    pub skipped_bins: usize,
}

impl ProximityReport {
    pub fn violations(&self) -> usize {
        self.pairs.iter().filter(|p| !p.holds).count()
    }
}

fn mean_rows(rows: &[usize], c: usize, f: impl Fn(usize, usize) -> f64) -> Vec<f64> {
    let mut out = vec![0.0; c];
    for &i in rows {
        for (k, o) in out.iter_mut().enumerate() {
            *o += f(i, k);
        }
    }
    out.iter().map(|v| v / rows.len() as f64).collect()
}

fn l1_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Bins rows by their top-class confidence and, per bin, compares the label
/// frequencies of the dense and sparse halves with
/// `2 eps + sqrt(2 ln(4C/delta) / min|S|) + |conf(S1) - conf(S2)|_1`.
#[allow(clippy::too_many_arguments)]
pub fn verify_theorem5(
    probs: ArrayView2<f64>,
    labels: &[usize],
    features: ArrayView2<f64>,
    epsilon: f64,
    k: usize,
    delta: f64,
    bins: usize,
    min_half: usize,
) -> Result<ProximityReport> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidDelta(delta));
    }
    if bins == 0 {
        return Err(Error::InvalidArgument("bin count must be at least 1".into()));
    }
    let (n, c) = probs.dim();
    if labels.len() != n || features.nrows() != n {
        return Err(Error::ShapeMismatch(format!(
            "{n} probability rows, {} labels, {} feature rows",
            labels.len(),
            features.nrows()
        )));
    }
    let scores = proximity_scores(features, k)?;
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); bins];
    for (i, row) in probs.rows().into_iter().enumerate() {
        let conf = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        groups[equal_width_index(conf, bins)].push(i);
    }
    let log_term = 2.0 * (4.0 * c as f64 / delta).ln();
    let mut pairs = Vec::new();
    let mut skipped = 0;
    for (b, mut members) in groups.into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        members.sort_by(|&a, &z| scores[a].total_cmp(&scores[z]).then(a.cmp(&z)));
        let (dense, sparse) = members.split_at(members.len() / 2);
        if dense.len() < min_half || sparse.len() < min_half {
            skipped += 1;
            continue;
        }
        let onehot = |i: usize, k: usize| if labels[i] == k { 1.0 } else { 0.0 };
        let freq_gap = l1_gap(&mean_rows(dense, c, onehot), &mean_rows(sparse, c, onehot));
        let conf = |i: usize, k: usize| probs[[i, k]];
        let conf_gap = l1_gap(&mean_rows(dense, c, conf), &mean_rows(sparse, c, conf));
        let hoeffding_term = (log_term / dense.len().min(sparse.len()) as f64).sqrt();
        let bound = 2.0 * epsilon + hoeffding_term + conf_gap;
        pairs.push(SubBinPair {
            bin: b,
            size_dense: dense.len(),
            size_sparse: sparse.len(),
            freq_gap,
            conf_gap,
            hoeffding_term,
            epsilon_term: 2.0 * epsilon,
            bound,
            holds: freq_gap <= bound,
        });
    }
    Ok(ProximityReport {
        k,
        delta,
        epsilon,
        scores,
        pairs,
        skipped_bins: skipped,
    })
}

/// Labels with the sparsest rows of every top-class confidence bin (score
/// above the bin's `quantile`) reassigned to class `target`.
pub fn proximity_biased_labels(
    probs: ArrayView2<f64>,
    labels: &[usize],
    scores: &[f64],
    bins: usize,
    quantile: f64,
    target: usize,
) -> Vec<usize> {
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); bins.max(1)];
    for (i, row) in probs.rows().into_iter().enumerate() {
        let conf = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        groups[equal_width_index(conf, bins.max(1))].push(i);
    }
    let mut out = labels.to_vec();
    for g in groups.iter().filter(|g| !g.is_empty()) {
        let mut s: Vec<f64> = g.iter().map(|&i| scores[i]).collect();
        s.sort_by(f64::total_cmp);
        let cut = s[((quantile * s.len() as f64).floor() as usize).min(s.len() - 1)];
        for &i in g {
            if scores[i] > cut {
                out[i] = target;
            }
        }
    }
    out
}
