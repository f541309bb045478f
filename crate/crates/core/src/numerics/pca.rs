use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Centering vector plus `d'` orthonormal principal directions (one per row).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaProjection {
    pub mean: Array1<f64>,
    pub components: Array2<f64>,
    pub eigenvalues: Vec<f64>,
    /// Set when the sample covariance has rank below `d'`; the trailing
    /// components then span an arbitrary orthonormal complement.
    pub degenerate: bool,
}

impl PcaProjection {
    pub fn dim(&self) -> usize {
        self.components.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.components.ncols()
    }

    pub fn project(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                left: x.ncols(),
                right: self.input_dim(),
            });
        }
        let centered = &x - &self.mean.view().insert_axis(Axis(0));
        Ok(centered.dot(&self.components.t()))
    }
}

/// Top-`d'` eigenvectors of the sample covariance, in nonincreasing
/// eigenvalue order. Each component's largest-magnitude entry is made
/// positive so results do not depend on the eigensolver's sign choice.
pub fn fit_pca(x: ArrayView2<f64>, d_out: usize) -> Result<PcaProjection> {
    let (n, m) = x.dim();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("pca needs at least 2 rows, got {n}")));
    }
    if d_out == 0 || d_out > m || d_out > n - 1 {
        return Err(Error::InvalidArgument(format!(
            "pca dimension {d_out} must lie in 1..=min(n-1, m) = {}",
            m.min(n - 1)
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("fit_pca"));
    }
    let mean = x.mean_axis(Axis(0)).expect("n >= 2");
    let centered = &x - &mean.view().insert_axis(Axis(0));
    let cov = centered.t().dot(&centered) / (n as f64 - 1.0);

    let sym = DMatrix::from_fn(m, m, |i, j| 0.5 * (cov[[i, j]] + cov[[j, i]]));
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let top = eig.eigenvalues[order[0]].max(0.0);
    let rank_tol = top * 1e-12 * m as f64;
    let mut components = Array2::zeros((d_out, m));
    let mut eigenvalues = Vec::with_capacity(d_out);
    let mut degenerate = false;
    for (r, &k) in order.iter().take(d_out).enumerate() {
        let lambda = eig.eigenvalues[k];
        if !(lambda > rank_tol) {
            degenerate = true;
        }
        eigenvalues.push(lambda.max(0.0));
        let col = eig.eigenvectors.column(k);
        let pivot = (0..m)
            .max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs()).then(b.cmp(&a)))
            .unwrap_or(0);
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..m {
            components[[r, j]] = sign * col[j];
        }
    }
    if degenerate {
        log::warn!("pca: covariance rank below {d_out}; trailing components are arbitrary");
    }
    Ok(PcaProjection {
        mean,
        components,
        eigenvalues,
        degenerate,
    })
}
