use serde::{Deserialize, Serialize};

use super::platt::check_class;
use crate::dataset::CalibrationDataset;
use crate::error::{Error, Result};
use crate::numerics::pav_isotonic;

/// Nondecreasing step function: `values[i]` holds on `[knots[i], knots[i+1])`,
/// and the end values extend beyond the outer knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotonicMap {
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
}

impl IsotonicMap {
    pub fn eval(&self, x: f64) -> f64 {
        let k = self.knots.partition_point(|&t| t <= x);
        self.values[k.saturating_sub(1)]
    }
}

/// Least-squares nondecreasing fit of `targets` against `scores`. Equal
/// scores are pooled before the PAV pass so each knot is a distinct score.
pub fn fit_isotonic_map(scores: &[f64], targets: &[f64]) -> Result<IsotonicMap> {
    if scores.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            left: scores.len(),
            right: targets.len(),
        });
    }
    if scores.is_empty() {
        return Err(Error::EmptyInput("isotonic scores"));
    }
    if scores.iter().chain(targets).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("isotonic inputs"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut knots: Vec<f64> = Vec::new();
    let mut sums: Vec<f64> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    for i in order {
        if knots.last() == Some(&scores[i]) {
            *sums.last_mut().expect("nonempty") += targets[i];
            *weights.last_mut().expect("nonempty") += 1.0;
        } else {
            knots.push(scores[i]);
            sums.push(targets[i]);
            weights.push(1.0);
        }
    }
    let means: Vec<f64> = sums.iter().zip(&weights).map(|(s, w)| s / w).collect();
    let values = pav_isotonic(&means, &weights)?;
    Ok(IsotonicMap { knots, values })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotonicParams {
    pub maps: Vec<IsotonicMap>,
    /// Classes with no positives or no negatives in the calibration split.
    pub degenerate: Vec<usize>,
}

/// Per-class maps from the predicted probability of the class to its
/// one-hot target.
pub fn fit_isotonic(cal: &CalibrationDataset) -> Result<IsotonicParams> {
    let probs = cal.probs();
    let probs = probs.view();
    let labels = cal.labels();
    let mut maps = Vec::with_capacity(cal.classes());
    let mut degenerate = Vec::new();
    for k in 0..cal.classes() {
        if let Err(e) = check_class(labels, k) {
            log::warn!("isotonic: {e}; the fitted map is constant");
            degenerate.push(k);
        }
        let targets: Vec<f64> = labels.iter().map(|&y| if y == k { 1.0 } else { 0.0 }).collect();
        maps.push(fit_isotonic_map(&probs.column(k).to_vec(), &targets)?);
    }
    Ok(IsotonicParams { maps, degenerate })
}
