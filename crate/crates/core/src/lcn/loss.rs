use ndarray::{Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ForwardCache, LcnModel, LcnParams};
use crate::error::{Error, Result};
use crate::kernels::{normalize_from_sq_dists, KernelConfig};
use crate::numerics::{jsd, softmax_into};

const CE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    /// Mean Jensen-Shannon distance between predictions and kernel estimates.
    pub alignment: f64,
    /// Mean cross-entropy of the kernel estimates against the labels.
    pub similarity: f64,
}

/// Row-normalized in-batch kernel weights on `phi` (dense, zero diagonal when
/// self is excluded).
fn batch_weights(phi: ArrayView2<f64>, kernel: &KernelConfig) -> Result<Array2<f64>> {
    let nb = phi.nrows();
    if nb == 0 || (kernel.exclude_self && nb < 2) {
        return Err(Error::NoNeighbors { anchor: 0 });
    }
    let d = phi.ncols();
    let pts: Vec<f64> = phi.iter().copied().collect();
    let rows: Vec<Vec<f64>> = (0..nb)
        .into_par_iter()
        .map(|i| {
            let a = &pts[i * d..(i + 1) * d];
            let mut idx = Vec::with_capacity(nb);
            let mut d2 = Vec::with_capacity(nb);
            for j in 0..nb {
                if kernel.exclude_self && j == i {
                    continue;
                }
                let b = &pts[j * d..(j + 1) * d];
                let mut acc = 0.0;
                for t in 0..d {
                    let diff = a[t] - b[t];
                    acc += diff * diff;
                }
                idx.push(j);
                d2.push(acc);
            }
            normalize_from_sq_dists(kernel, &mut d2);
            let mut row = vec![0.0; nb];
            for (j, w) in idx.into_iter().zip(d2) {
                row[j] = w;
            }
            row
        })
        .collect();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(Array2::from_shape_vec((nb, nb), flat).expect("square"))
}

fn parts_from(
    probs: ArrayView2<f64>,
    theta: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    lambda: f64,
) -> LossParts {
    let nb = probs.nrows() as f64;
    let mut align = 0.0;
    let mut sim = 0.0;
    for ((p, q), t) in probs.rows().into_iter().zip(theta.rows()).zip(targets.rows()) {
        align += jsd(p.as_slice().unwrap_or(&p.to_vec()), q.as_slice().unwrap_or(&q.to_vec())).sqrt();
        sim -= t.iter().zip(q).map(|(&y, &th)| if y != 0.0 { y * th.max(CE_FLOOR).ln() } else { 0.0 }).sum::<f64>();
    }
    let alignment = align / nb;
    let similarity = sim / nb;
    LossParts {
        total: alignment + lambda * similarity,
        alignment,
        similarity,
    }
}

/// Batch loss: mean over rows of `d_JSD(p_i, theta_i) + lambda CE(y_i, theta_i)`
/// where `theta_i` is the in-batch Nadaraya-Watson estimate of the targets on
/// `phi` with self excluded.
pub fn lcn_loss(
    phi: ArrayView2<f64>,
    probs: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    lambda: f64,
    gamma: f64,
) -> Result<LossParts> {
    let kernel = KernelConfig::new(gamma, true)?;
    let w = batch_weights(phi, &kernel)?;
    let theta = w.dot(&targets);
    Ok(parts_from(probs, theta.view(), targets, lambda))
}

/// Loss together with its gradients with respect to `phi'` and `g'`.
pub fn loss_and_output_grads(
    phi: ArrayView2<f64>,
    g: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    lambda: f64,
    kernel: &KernelConfig,
) -> Result<(LossParts, Array2<f64>, Array2<f64>)> {
    let (nb, c) = g.dim();
    if phi.nrows() != nb || targets.nrows() != nb || targets.ncols() != c {
        return Err(Error::ShapeMismatch("phi, logits and targets must share rows".into()));
    }
    let w = batch_weights(phi, kernel)?;
    let theta = w.dot(&targets);
    let mut probs = Array2::zeros((nb, c));
    let mut buf = vec![0.0; c];
    for (i, row) in g.rows().into_iter().enumerate() {
        softmax_into(&row.to_vec(), &mut buf);
        probs.row_mut(i).assign(&Array1::from(buf.clone()));
    }
    let parts = parts_from(probs.view(), theta.view(), targets, lambda);

    let inv_n = 1.0 / nb as f64;
    let mut dg = Array2::zeros((nb, c));
    let mut gq = Array2::zeros((nb, c));
    for i in 0..nb {
        let p = probs.row(i);
        let q = theta.row(i);
        let div = jsd(&p.to_vec(), &q.to_vec());
        let dist = div.sqrt();
        let mut gp = vec![0.0; c];
        if dist > 0.0 {
            let outer = inv_n / (2.0 * dist);
            for k in 0..c {
                let (pk, qk) = (p[k], q[k]);
                let m = pk + qk;
                if pk > 0.0 {
                    gp[k] = outer * 0.5 * (2.0 * pk / m).ln();
                }
                if qk > 0.0 {
                    gq[[i, k]] = outer * 0.5 * (2.0 * qk / m).ln();
                }
            }
        }
        for k in 0..c {
            let y = targets[[i, k]];
            if y != 0.0 && q[k] > CE_FLOOR {
                gq[[i, k]] -= inv_n * lambda * y / q[k];
            }
        }
        let dot: f64 = gp.iter().zip(p.iter()).map(|(a, b)| a * b).sum();
        for k in 0..c {
            dg[[i, k]] = p[k] * (gp[k] - dot);
        }
    }

    // dL/ds_ij = w_ij (gq_i . y_j - gq_i . theta_i)
    let gq_t = gq.dot(&targets.t());
    let base: Vec<f64> = (0..nb).map(|i| gq.row(i).dot(&theta.row(i))).collect();
    let mut a = Array2::zeros((nb, nb));
    for i in 0..nb {
        for j in 0..nb {
            let wij = w[[i, j]];
            if wij != 0.0 {
                a[[i, j]] = wij * (gq_t[[i, j]] - base[i]);
            }
        }
    }
    // ds_ij/dphi_i = -(phi_i - phi_j)/gamma^2, and the opposite for phi_j
    let inv_g2 = 1.0 / (kernel.gamma * kernel.gamma);
    let d = phi.ncols();
    let rows: Vec<Vec<f64>> = (0..nb)
        .into_par_iter()
        .map(|i| {
            let mut out = vec![0.0; d];
            for j in 0..nb {
                let coef = a[[i, j]] + a[[j, i]];
                if coef == 0.0 {
                    continue;
                }
                for t in 0..d {
                    out[t] -= coef * (phi[[i, t]] - phi[[j, t]]) * inv_g2;
                }
            }
            out
        })
        .collect();
    let dphi = Array2::from_shape_vec((nb, d), rows.into_iter().flatten().collect()).expect("shape");
    Ok((parts, dphi, dg))
}

/// Loss and parameter gradients for one batch, from a forward pass cache.
pub fn lcn_backward(
    model: &LcnModel,
    cache: &ForwardCache,
    targets: ArrayView2<f64>,
) -> Result<(LossParts, LcnParams)> {
    let kernel = KernelConfig::new(model.config.gamma, model.config.exclude_self)?;
    let (parts, dphi, dg) = loss_and_output_grads(cache.phi.view(), cache.g.view(), targets, model.config.lambda, &kernel)?;
    let p = &model.params;
    let mut grads = p.zeros_like();
    grads.wg = dg.t().dot(&cache.hidden);
    grads.bg_vec = dg.sum_axis(Axis(0));
    grads.w_g = (&dg * &cache.logits_in).sum();
    grads.b_g = dg.sum();
    grads.wf = dphi.t().dot(&cache.hidden);
    grads.bf = dphi.sum_axis(Axis(0));
    grads.w_phi = (&dphi * &cache.pca).sum();
    grads.b_phi = dphi.sum();
    let dh = dphi.dot(&p.wf) + dg.dot(&p.wg);
    let mut da = dh * &cache.mask;
    da.zip_mut_with(&cache.pre, |v, &pre| {
        if pre <= 0.0 {
            *v = 0.0;
        }
    });
    grads.w1 = da.t().dot(&cache.input);
    grads.b1 = da.sum_axis(Axis(0));
    Ok((parts, grads))
}
