use serde::{Deserialize, Serialize};

use crate::dataset::CalibrationDataset;
use crate::error::{Error, Result};
use crate::numerics::{adam_step, AdamState};

pub const PLATT_STEPS: usize = 500;
pub const PLATT_LR: f64 = 1e-2;

/// One-vs-rest sigmoid `sigma(a_c z_c + b_c)` per class. Classes listed in
/// `fallback` had no positives or no negatives and keep `a = 1, b = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlattParams {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub fallback: Vec<usize>,
}

pub(crate) fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

fn softplus(s: f64) -> f64 {
    s.max(0.0) + (-s.abs()).exp().ln_1p()
}

/// Mean binary NLL of `sigma(a z + b)` against `y`.
pub fn binary_nll(z: &[f64], y: &[bool], a: f64, b: f64) -> f64 {
    let total: f64 = z
        .iter()
        .zip(y)
        .map(|(&z, &y)| {
            let s = a * z + b;
            softplus(s) - if y { s } else { 0.0 }
        })
        .sum();
    total / z.len() as f64
}

/// Full-batch Adam on the binary NLL from `a = 1, b = 0`.
pub fn fit_sigmoid(z: &[f64], y: &[bool], steps: usize, lr: f64) -> Result<(f64, f64)> {
    let n = z.len() as f64;
    let mut p = [1.0, 0.0];
    let mut state = AdamState::new(2, lr);
    for _ in 0..steps {
        let mut g = [0.0, 0.0];
        for (&z, &y) in z.iter().zip(y) {
            let r = sigmoid(p[0] * z + p[1]) - if y { 1.0 } else { 0.0 };
            g[0] += r * z;
            g[1] += r;
        }
        g[0] /= n;
        g[1] /= n;
        adam_step(&mut state, &mut p, &g)?;
    }
    if !p.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("platt parameters diverged".into()));
    }
    Ok((p[0], p[1]))
}

/// Checks that class `c` has both positives and negatives.
pub fn check_class(labels: &[usize], c: usize) -> Result<()> {
    let positives = labels.iter().filter(|&&y| y == c).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::DegenerateClass {
            class: c,
            positives,
            n: labels.len(),
        });
    }
    Ok(())
}

pub fn fit_platt(cal: &CalibrationDataset) -> Result<PlattParams> {
    let c = cal.classes();
    let logits = cal.logits();
    let labels = cal.labels();
    let mut out = PlattParams {
        a: vec![1.0; c],
        b: vec![0.0; c],
        fallback: Vec::new(),
    };
    for k in 0..c {
        if let Err(e) = check_class(labels, k) {
            log::warn!("platt: {e}; using a = 1, b = 0");
            out.fallback.push(k);
            continue;
        }
        let z: Vec<f64> = logits.column(k).to_vec();
        let y: Vec<bool> = labels.iter().map(|&l| l == k).collect();
        let (a, b) = fit_sigmoid(&z, &y, PLATT_STEPS, PLATT_LR)?;
        out.a[k] = a;
        out.b[k] = b;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use ndarray::Array2;

    #[test]
    fn recovers_generating_sigmoid() {
        let mut rng = Rng::new(21);
        let n = 10_000;
        let z: Vec<f64> = (0..n).map(|_| 2.0 * rng.normal()).collect();
        let y: Vec<bool> = z.iter().map(|&z| rng.uniform() < sigmoid(2.0 * z + 1.0)).collect();
        let (a, b) = fit_sigmoid(&z, &y, PLATT_STEPS, PLATT_LR).unwrap();
        assert!((a - 2.0).abs() < 0.1 && (b - 1.0).abs() < 0.1, "{a} {b}");
        // Newton on the same data as an independent optimizer.
        let (mut an, mut bn) = (1.0, 0.0);
        for _ in 0..50 {
            let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (&z, &y) in z.iter().zip(&y) {
                let p = sigmoid(an * z + bn);
                let r = p - if y { 1.0 } else { 0.0 };
                let w = p * (1.0 - p);
                ga += r * z;
                gb += r;
                haa += w * z * z;
                hab += w * z;
                hbb += w;
            }
            let det = haa * hbb - hab * hab;
            an -= (hbb * ga - hab * gb) / det;
            bn -= (haa * gb - hab * ga) / det;
        }
        assert!(binary_nll(&z, &y, a, b) - binary_nll(&z, &y, an, bn) < 1e-4);
    }

    #[test]
    fn absent_class_falls_back() {
        let logits = Array2::from_shape_fn((6, 3), |(i, k)| (i * 3 + k) as f64 * 0.1);
        let d = CalibrationDataset::new(Array2::zeros((6, 0)), logits, vec![0, 1, 0, 1, 1, 0], None).unwrap();
        let p = fit_platt(&d).unwrap();
        assert_eq!(p.fallback, vec![2]);
        assert_eq!((p.a[2], p.b[2]), (1.0, 0.0));
        assert!(matches!(check_class(d.labels(), 2), Err(Error::DegenerateClass { class: 2, positives: 0, n: 6 })));
    }
}
