//! Deterministic numerical primitives shared by every other module.

mod optim;
mod pav;
mod pca;
mod rng;

pub use optim::{adam_step, golden_section_min, AdamState};
pub use pav::pav_isotonic;
pub use pca::{fit_pca, PcaProjection};
pub use rng::Rng;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Numerically stable softmax. Shift-invariant: the max entry is subtracted
/// before exponentiation, so `softmax(z + c)` and `softmax(z)` agree.
pub fn softmax(z: &[f64]) -> Result<Vec<f64>> {
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("softmax"));
    }
    let mut out = vec![0.0; z.len()];
    softmax_into(z, &mut out);
    Ok(out)
}

/// Softmax without the finiteness check; callers guarantee finite input.
pub(crate) fn softmax_into(z: &[f64], out: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(z) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

pub fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Row-wise softmax of a logit matrix.
pub fn softmax_rows(logits: ArrayView2<f64>) -> Result<Array2<f64>> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("softmax"));
    }
    let mut out = Array2::zeros(logits.raw_dim());
    let mut buf = vec![0.0; logits.ncols()];
    let mut zrow = vec![0.0; logits.ncols()];
    for (i, row) in logits.rows().into_iter().enumerate() {
        for (z, &v) in zrow.iter_mut().zip(row) {
            *z = v;
        }
        softmax_into(&zrow, &mut buf);
        for (o, &v) in out.row_mut(i).iter_mut().zip(&buf) {
            *o = v;
        }
    }
    Ok(out)
}

/// Jensen-Shannon divergence with natural log, 0 ln 0 = 0.
pub fn jsd(p: &[f64], q: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        let ta = if a > 0.0 { a * (a / m).ln() } else { 0.0 };
        let tb = if b > 0.0 { b * (b / m).ln() } else { 0.0 };
        // one commutative add per coordinate keeps jsd(p, q) == jsd(q, p) bitwise
        acc += ta + tb;
    }
    (0.5 * acc).max(0.0)
}

/// Jensen-Shannon distance, the square root of [`jsd`]; lies in [0, sqrt(ln 2)].
pub fn jsd_distance(p: &[f64], q: &[f64]) -> f64 {
    jsd(p, q).sqrt()
}
