use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::kernels::KernelConfig;
use crate::metrics::kernel_estimates;
use crate::numerics::{jsd_distance, softmax};
use crate::synth::{generate, Generator, Mixture, SynthSpec};

/// Two unit-variance Gaussians at `-separation/2` and `+separation/2` on the
/// first axis of a `dim`-dimensional space. The bandwidth shrinks as
/// `gamma0 (n / 500)^(-1/(dim + 4))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencySpec {
    pub sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub dim: usize,
    pub separation: f64,
    pub gamma0: f64,
    /// Predictions are `softmax(ln p_true / t_pred)`; 1 gives `p_hat = p_true`.
    pub t_pred: f64,
}

impl Default for ConsistencySpec {
    fn default() -> Self {
        Self {
            sizes: vec![500, 2000, 8000],
            seeds: vec![0, 1, 2, 3, 4],
            dim: 2,
            separation: 1.0,
            gamma0: 0.3,
            t_pred: 1.0,
        }
    }
}

impl ConsistencySpec {
    pub fn bandwidth(&self, n: usize) -> f64 {
        self.gamma0 * (n as f64 / 500.0).powf(-1.0 / (self.dim as f64 + 4.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    pub n: usize,
    pub seed: u64,
    pub gamma: f64,
    pub mean_to_estimate: f64,
    pub mean_to_truth: f64,
    pub gap: f64,
}

/// For each size and seed: mean `d_JSD(p_hat, theta_hat)`, mean
/// `d_JSD(p_hat, p_true)` and their absolute difference.
pub fn jsd_consistency_experiment(spec: &ConsistencySpec) -> Result<Vec<ConsistencyRow>> {
    let mut means = vec![vec![0.0; spec.dim]; 2];
    means[0][0] = -spec.separation / 2.0;
    means[1][0] = spec.separation / 2.0;
    let mixture = Mixture {
        means,
        sigma: 1.0,
        priors: vec![0.5, 0.5],
    };
    let mut out = Vec::new();
    for &n in &spec.sizes {
        let gamma = spec.bandwidth(n);
        let kernel = KernelConfig::new(gamma, true)?;
        for &seed in &spec.seeds {
            let (d, truth) = generate(&SynthSpec {
                generator: Generator::GaussianMixture { mixture: mixture.clone() },
                n,
                seed,
            })?;
            let theta = kernel_estimates(d.features(), d.labels(), 2, &kernel)?;
            let truth = truth.view();
            let mut phat = Array2::zeros((n, 2));
            for i in 0..n {
                let z: Vec<f64> = truth.row(i).iter().map(|p| p.max(1e-300).ln() / spec.t_pred).collect();
                let p = softmax(&z)?;
                phat[[i, 0]] = p[0];
                phat[[i, 1]] = p[1];
            }
            let mut to_est = 0.0;
            let mut to_truth = 0.0;
            for i in 0..n {
                let p = phat.row(i).to_vec();
                to_est += jsd_distance(&p, &theta.row(i).to_vec());
                to_truth += jsd_distance(&p, &truth.row(i).to_vec());
            }
            let mean_to_estimate = to_est / n as f64;
            let mean_to_truth = to_truth / n as f64;
            out.push(ConsistencyRow {
                n,
                seed,
                gamma,
                mean_to_estimate,
                mean_to_truth,
                gap: (mean_to_estimate - mean_to_truth).abs(),
            });
        }
    }
    Ok(out)
}

/// Median gap per size, in the order of `spec.sizes`.
pub fn median_gaps(spec: &ConsistencySpec, rows: &[ConsistencyRow]) -> Vec<(usize, f64)> {
    spec.sizes
        .iter()
        .map(|&n| {
            let mut g: Vec<f64> = rows.iter().filter(|r| r.n == n).map(|r| r.gap).collect();
            g.sort_by(f64::total_cmp);
            let k = g.len();
            let med = if k == 0 {
                f64::NAN
            } else if k % 2 == 1 {
                g[k / 2]
            } else {
                0.5 * (g[k / 2 - 1] + g[k / 2])
            };
            (n, med)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bandwidth_schedule() {
        let s = ConsistencySpec::default();
        assert_eq!(s.bandwidth(500), 0.3);
        assert!(s.bandwidth(8000) < s.bandwidth(2000));
    }

    #[test]
    fn gap_shrinks_with_n() {
        let spec = ConsistencySpec {
            sizes: vec![200, 3200],
            seeds: vec![0, 1, 2],
            ..ConsistencySpec::default()
        };
        let rows = jsd_consistency_experiment(&spec).unwrap();
        let med = median_gaps(&spec, &rows);
        assert!(med[1].1 < med[0].1, "{med:?}");
    }
}
