use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{lcn_backward, LcnConfig, LcnModel, LossParts};
use crate::dataset::CalibrationDataset;
use crate::error::{Error, Result};
use crate::numerics::{adam_step, fit_pca, AdamState, Rng};

const STREAM_INIT: u64 = 1;
const STREAM_SPLIT: u64 = 2;
const STREAM_SHUFFLE: u64 = 1 << 20;
const STREAM_DROPOUT: u64 = 1 << 40;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochTrace {
    pub total: f64,
    pub alignment: f64,
    pub similarity: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    /// Validation loss of the initial model.
    pub initial_val_loss: f64,
    pub epochs: Vec<EpochTrace>,
    /// Epoch whose parameters were returned (0 = initialization).
    pub best_epoch: usize,
    pub pca_dim: usize,
}

fn onehot(labels: &[usize], c: usize) -> Array2<f64> {
    Array2::from_shape_fn((labels.len(), c), |(i, k)| if labels[i] == k { 1.0 } else { 0.0 })
}

/// Consecutive chunks of `size`, with a trailing chunk shorter than 2 merged
/// into its predecessor.
fn chunks(idx: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = idx.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|c| c.len() < 2) {
        let k = out.len();
        let start = idx.len() - out[k - 2].len() - out[k - 1].len();
        out.truncate(k - 2);
        out.push(&idx[start..]);
    }
    out
}

/// Size-weighted mean loss over fixed chunks, eval mode.
fn validation_loss(
    model: &LcnModel,
    x: ArrayView2<f64>,
    z: ArrayView2<f64>,
    y: ArrayView2<f64>,
    batch: usize,
) -> Result<f64> {
    let idx: Vec<usize> = (0..x.nrows()).collect();
    let mut acc = 0.0;
    for chunk in chunks(&idx, batch) {
        let xb = x.select(Axis(0), chunk);
        let zb = z.select(Axis(0), chunk);
        let yb = y.select(Axis(0), chunk);
        let cache = model.forward_cached(xb.view(), zb.view(), false, None)?;
        let (parts, _) = lcn_backward(model, &cache, yb.view())?;
        acc += parts.total * chunk.len() as f64;
    }
    Ok(acc / x.nrows() as f64)
}

/// Fits PCA and the network on `cal`. A seeded share of the rows is held out;
/// the returned parameters are those with the lowest held-out loss, the
/// initialization included.
pub fn train_lcn(cal: &CalibrationDataset, cfg: &LcnConfig) -> Result<(LcnModel, TrainTrace)> {
    cfg.validate()?;
    let n = cal.n();
    let c = cal.classes();
    let mut order: Vec<usize> = (0..n).collect();
    Rng::stream(cfg.seed, STREAM_SPLIT).shuffle(&mut order);
    let n_val = (cfg.val_frac * n as f64).round() as usize;
    let (val_idx, train_idx) = if n_val >= 2 && n - n_val >= 2 {
        let (v, t) = order.split_at(n_val);
        let mut v = v.to_vec();
        let mut t = t.to_vec();
        v.sort_unstable();
        t.sort_unstable();
        (v, t)
    } else {
        ((0..n).collect(), (0..n).collect())
    };
    if train_idx.len() < 2 {
        return Err(Error::InvalidArgument("training needs at least 2 rows".into()));
    }

    let x_all = cal.features();
    let z_all = cal.logits();
    let y_all = onehot(cal.labels(), c);
    let x_tr = x_all.select(Axis(0), &train_idx);
    let z_tr = z_all.select(Axis(0), &train_idx);
    let y_tr = y_all.select(Axis(0), &train_idx);
    let x_va = x_all.select(Axis(0), &val_idx);
    let z_va = z_all.select(Axis(0), &val_idx);
    let y_va = y_all.select(Axis(0), &val_idx);

    let d = cfg.pca_dim.min(cal.m()).min(train_idx.len() - 1);
    if d != cfg.pca_dim {
        log::info!("lcn: pca dimension clamped from {} to {d}", cfg.pca_dim);
    }
    if d == 0 {
        return Err(Error::InvalidArgument("features are required to train an lcn".into()));
    }
    let pca = fit_pca(x_tr.view(), d)?;
    let mut model = LcnModel::init(pca, c, cfg, &mut Rng::stream(cfg.seed, STREAM_INIT));

    let batch = cfg.batch_size.min(train_idx.len());
    let initial_val_loss = validation_loss(&model, x_va.view(), z_va.view(), y_va.view(), cfg.batch_size)?;
    let mut best = (initial_val_loss, model.params.clone(), 0usize);
    let mut flat = model.params.to_flat();
    let mut adam = AdamState::new(flat.len(), cfg.lr);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut step: u64 = 0;
    for epoch in 1..=cfg.epochs {
        let mut perm: Vec<usize> = (0..train_idx.len()).collect();
        Rng::stream(cfg.seed, STREAM_SHUFFLE + epoch as u64).shuffle(&mut perm);
        let mut sums = LossParts {
            total: 0.0,
            alignment: 0.0,
            similarity: 0.0,
        };
        for chunk in chunks(&perm, batch) {
            let xb = x_tr.select(Axis(0), chunk);
            let zb = z_tr.select(Axis(0), chunk);
            let yb = y_tr.select(Axis(0), chunk);
            let mut drop_rng = Rng::stream(cfg.seed, STREAM_DROPOUT + step);
            let cache = model.forward_cached(xb.view(), zb.view(), true, Some(&mut drop_rng))?;
            let (parts, grads) = lcn_backward(&model, &cache, yb.view())?;
            let g = grads.to_flat();
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("non-finite gradient at epoch {epoch}")));
            }
            adam_step(&mut adam, &mut flat, &g)?;
            model.params.set_flat(&flat);
            step += 1;
            let k = chunk.len() as f64;
            sums.total += parts.total * k;
            sums.alignment += parts.alignment * k;
            sums.similarity += parts.similarity * k;
        }
        let nt = train_idx.len() as f64;
        let val_loss = validation_loss(&model, x_va.view(), z_va.view(), y_va.view(), cfg.batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::Numerical(format!("non-finite validation loss at epoch {epoch}")));
        }
        if val_loss < best.0 {
            best = (val_loss, model.params.clone(), epoch);
        }
        epochs.push(EpochTrace {
            total: sums.total / nt,
            alignment: sums.alignment / nt,
            similarity: sums.similarity / nt,
            val_loss,
        });
        log::debug!("lcn epoch {epoch}: train {:.6} val {val_loss:.6}", sums.total / nt);
    }
    model.params = best.1;
    Ok((
        model,
        TrainTrace {
            initial_val_loss,
            epochs,
            best_epoch: best.2,
            pca_dim: d,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::softmax_rows;
    use crate::synth::{generate, SynthSpec};

    #[test]
    fn chunking_merges_singletons() {
        let idx: Vec<usize> = (0..7).collect();
        let c = chunks(&idx, 3);
        assert_eq!(c.iter().map(|c| c.len()).collect::<Vec<_>>(), vec![3, 4]);
        let c = chunks(&idx, 7);
        assert_eq!(c.len(), 1);
    }

    #[test]
    fn zero_epochs_is_identity() {
        let (d, _) = generate(&SynthSpec::benchmark(300, 1)).unwrap();
        let cfg = LcnConfig {
            epochs: 0,
            ..LcnConfig::default()
        };
        let (model, trace) = train_lcn(&d, &cfg).unwrap();
        assert!(trace.epochs.is_empty());
        assert_eq!(trace.pca_dim, 8);
        let (_, _, probs) = model.forward(d.features(), d.logits()).unwrap();
        let raw = softmax_rows(d.logits()).unwrap();
        for (a, b) in probs.iter().zip(raw.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn deterministic_and_never_worse_on_validation() {
        let (d, _) = generate(&SynthSpec::benchmark(600, 2)).unwrap();
        let cfg = LcnConfig {
            epochs: 3,
            batch_size: 128,
            seed: 5,
            ..LcnConfig::default()
        };
        let (m1, t1) = train_lcn(&d, &cfg).unwrap();
        let (m2, t2) = train_lcn(&d, &cfg).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(m1, m2);
        assert_eq!(t1.epochs.len(), 3);
        let best = t1.epochs.iter().map(|e| e.val_loss).fold(t1.initial_val_loss, f64::min);
        assert!(best <= t1.initial_val_loss);
        for e in &t1.epochs {
            assert!(e.total.is_finite());
        }
    }
}
