use ndarray::ArrayView2;

use crate::dataset::CalibrationDataset;
use crate::error::{Error, Result};
use crate::numerics::{golden_section_min, log_sum_exp};

pub const T_MIN: f64 = 0.05;
pub const T_MAX: f64 = 20.0;
const GRID: usize = 50;
const TOL: f64 = 1e-5;

/// Mean negative log-likelihood of `softmax(logits / t)`.
pub fn temperature_nll(logits: ArrayView2<f64>, labels: &[usize], t: f64) -> f64 {
    let mut buf = vec![0.0; logits.ncols()];
    let mut total = 0.0;
    for (row, &y) in logits.rows().into_iter().zip(labels) {
        for (b, z) in buf.iter_mut().zip(row.iter()) {
            *b = z / t;
        }
        total += log_sum_exp(&buf) - buf[y];
    }
    total / labels.len() as f64
}

fn grid() -> Vec<f64> {
    let (a, b) = (T_MIN.ln(), T_MAX.ln());
    (0..GRID).map(|i| (a + (b - a) * i as f64 / (GRID - 1) as f64).exp()).collect()
}

/// Minimizes the NLL over `[T_MIN, T_MAX]`. A log-spaced scan checks
/// unimodality first; when it fails, the search is restricted to the grid
/// cell around the scan minimum.
pub fn fit_temperature(cal: &CalibrationDataset) -> Result<f64> {
    let z = cal.logits();
    let y = cal.labels();
    let f = |t: f64| temperature_nll(z, y, t);
    let ts = grid();
    let vals: Vec<f64> = ts.iter().map(|&t| f(t)).collect();
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite NLL during temperature scan".into()));
    }
    let best = (0..GRID).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap_or(0);
    let unimodal = vals[..=best].windows(2).all(|w| w[1] <= w[0] + 1e-12)
        && vals[best..].windows(2).all(|w| w[1] >= w[0] - 1e-12);
    let (lo, hi) = if unimodal {
        (T_MIN, T_MAX)
    } else {
        log::warn!("temperature NLL is not unimodal on the scan grid; refining around T = {}", ts[best]);
        (ts[best.saturating_sub(1)], ts[(best + 1).min(GRID - 1)])
    };
    let mut t = golden_section_min(f, lo, hi, TOL)?;
    if f(ts[best]) < f(t) {
        t = ts[best];
    }
    if f(t) > f(1.0) + 1e-9 {
        t = 1.0;
    }
    Ok(t)
}
