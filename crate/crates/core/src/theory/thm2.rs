use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::BoundReport;
use crate::binning::{assign_bins, generic_metric, theorem2_bound, BinningScheme, Comparator};
use crate::error::{Error, Result};
use crate::synth::{generate, inject_local_miscalibration, InjectionMode, SynthSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Config {
    pub trials: usize,
    /// Generator for every trial; its seed is replaced by `seed + trial`.
    pub spec: SynthSpec,
    pub bins: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub seed: u64,
}

impl Default for Theorem2Config {
    fn default() -> Self {
        Self {
            trials: 200,
            spec: SynthSpec::benchmark(20_000, 0),
            bins: 15,
            epsilon: 0.05,
            delta: 0.05,
            seed: 0,
        }
    }
}

const INJECT_SALT: u64 = 0x5eed_0002;

/// Per trial: sample a dataset with known conditionals, perturb them by at
/// most `epsilon` in l1 per row, and compare class-wise ECE with the bound
/// evaluated at the realized tolerance.
pub fn verify_theorem2(cfg: &Theorem2Config) -> Result<Vec<BoundReport>> {
    if cfg.trials == 0 {
        return Err(Error::InvalidArgument("at least one trial is required".into()));
    }
    let scheme = BinningScheme::equal_width(cfg.bins, 0);
    (0..cfg.trials as u64)
        .into_par_iter()
        .map(|t| {
            let seed = cfg.seed.wrapping_add(t);
            let spec = SynthSpec {
                seed,
                ..cfg.spec.clone()
            };
            let (d, truth) = generate(&spec)?;
            let inj = inject_local_miscalibration(&d, &truth, cfg.epsilon, InjectionMode::UniformL1, seed ^ INJECT_SALT)?;
            let eps = inj.max_realized();
            let stats = assign_bins(inj.probs.view(), d.labels(), &scheme, d.priors())?;
            let observed = generic_metric(&stats, Comparator::AbsDiff);
            let b = theorem2_bound(&stats, eps, cfg.delta, Comparator::AbsDiff.lipschitz())?;
            Ok(BoundReport {
                observed,
                bound: b.total,
                epsilon_term: b.epsilon_term,
                variance_term: b.hoeffding_term,
                bias_term: 0.0,
                epsilon: eps,
                delta: cfg.delta,
                seed,
                n: d.n(),
                classes: d.classes(),
                bins: cfg.bins,
                gamma: None,
                holds: observed <= b.total,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Corollary1Row {
    pub epsilon: f64,
    pub mean_observed: f64,
    pub mean_epsilon_term: f64,
    pub mean_hoeffding_term: f64,
    pub hold_rate: f64,
}

/// Theorem 2 reports aggregated over a decreasing sequence of tolerances: as
/// the tolerance vanishes the metric is left with sampling fluctuation only.
pub fn corollary1_trend(base: &Theorem2Config, epsilons: &[f64]) -> Result<Vec<Corollary1Row>> {
    epsilons
        .iter()
        .map(|&epsilon| {
            let reports = verify_theorem2(&Theorem2Config {
                epsilon,
                ..base.clone()
            })?;
            let k = reports.len() as f64;
            let mean = |f: fn(&BoundReport) -> f64| reports.iter().map(f).sum::<f64>() / k;
            Ok(Corollary1Row {
                epsilon,
                mean_observed: mean(|r| r.observed),
                mean_epsilon_term: mean(|r| r.epsilon_term),
                mean_hoeffding_term: mean(|r| r.variance_term),
                hold_rate: super::hold_rate(&reports),
            })
        })
        .collect()
}
