use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::FitConfig;
use crate::dataset::CalibrationDataset;
use crate::error::{Error, Result};
use crate::numerics::{adam_step, softmax_rows, AdamState};

pub const LOG_CLIP: f64 = 1e-12;

/// `q = softmax(W ln p + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirichletParams {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl DirichletParams {
    pub fn identity(c: usize) -> Self {
        Self {
            w: (0..c).map(|i| (0..c).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect(),
            b: vec![0.0; c],
        }
    }

    fn to_flat(&self) -> Vec<f64> {
        self.w.iter().flatten().chain(&self.b).copied().collect()
    }

    fn from_flat(v: &[f64], c: usize) -> Self {
        Self {
            w: v[..c * c].chunks(c).map(<[f64]>::to_vec).collect(),
            b: v[c * c..].to_vec(),
        }
    }

    fn matrix(&self) -> Array2<f64> {
        let c = self.b.len();
        Array2::from_shape_fn((c, c), |(i, j)| self.w[i][j])
    }

    pub fn apply(&self, probs: ArrayView2<f64>) -> Result<Array2<f64>> {
        let c = self.b.len();
        if probs.ncols() != c {
            return Err(Error::ClassCountMismatch {
                expected: c,
                found: probs.ncols(),
            });
        }
        let u = log_clip(probs).dot(&self.matrix().t()) + &Array1::from(self.b.clone()).insert_axis(Axis(0));
        softmax_rows(u.view())
    }
}

fn log_clip(p: ArrayView2<f64>) -> Array2<f64> {
    p.mapv(|v| v.max(LOG_CLIP).ln())
}

fn onehot(labels: &[usize], c: usize) -> Array2<f64> {
    Array2::from_shape_fn((labels.len(), c), |(i, k)| if labels[i] == k { 1.0 } else { 0.0 })
}

fn mean_nll(q: ArrayView2<f64>, labels: &[usize]) -> f64 {
    let s: f64 = labels.iter().enumerate().map(|(i, &y)| -q[[i, y]].max(1e-300).ln()).sum();
    s / labels.len() as f64
}

/// Adam on the training share of `cal`, keeping the parameters with the
/// lowest held-out NLL; the identity initialization is a candidate.
pub fn fit_dirichlet(cal: &CalibrationDataset, cfg: &FitConfig) -> Result<DirichletParams> {
    let c = cal.classes();
    let (train, val) = cfg.split(cal.n());
    let probs = cal.probs();
    let s_all = log_clip(probs.view());
    let s_tr = s_all.select(Axis(0), &train);
    let s_va = s_all.select(Axis(0), &val);
    let y_lab_tr: Vec<usize> = train.iter().map(|&i| cal.labels()[i]).collect();
    let y_lab_va: Vec<usize> = val.iter().map(|&i| cal.labels()[i]).collect();
    let y_tr = onehot(&y_lab_tr, c);
    let n = train.len() as f64;

    let mut params = DirichletParams::identity(c);
    let val_nll = |p: &DirichletParams| -> Result<f64> {
        let u = s_va.dot(&p.matrix().t()) + &Array1::from(p.b.clone()).insert_axis(Axis(0));
        Ok(mean_nll(softmax_rows(u.view())?.view(), &y_lab_va))
    };
    let mut best = (val_nll(&params)?, params.clone());
    let mut flat = params.to_flat();
    let mut state = AdamState::new(flat.len(), cfg.lr);
    let mut since_best = 0;
    for step in 0..cfg.max_steps {
        let u = s_tr.dot(&params.matrix().t()) + &Array1::from(params.b.clone()).insert_axis(Axis(0));
        let r = softmax_rows(u.view())? - &y_tr;
        let gw = r.t().dot(&s_tr) / n;
        let gb = r.sum_axis(Axis(0)) / n;
        let g: Vec<f64> = gw.iter().chain(gb.iter()).copied().collect();
        adam_step(&mut state, &mut flat, &g)?;
        params = DirichletParams::from_flat(&flat, c);
        let v = val_nll(&params)?;
        if !v.is_finite() {
            return Err(Error::Numerical(format!("dirichlet validation NLL non-finite at step {step}")));
        }
        if v < best.0 {
            best = (v, params.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                log::debug!("dirichlet: early stop at step {step}");
                break;
            }
        }
    }
    Ok(best.1)
}
