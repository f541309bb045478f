//! Empirical checks of the bounds relating binned and local calibration
//! errors to the local calibration tolerance.

mod thm2;
mod thm3;
mod thm5;
mod toy;

pub use thm2::{corollary1_trend, verify_theorem2, Corollary1Row, Theorem2Config};
pub use thm3::{estimate_epsilon, gamma_sweep, theorem3_terms, verify_theorem3, Theorem3Terms};
pub use thm5::{proximity_biased_labels, proximity_scores, verify_theorem5, ProximityReport, SubBinPair};
pub use toy::{toy_empirical, toy_example, ToyRegionRow, ToyReport, TOY_DENSITIES};

use serde::{Deserialize, Serialize};

/// Observed metric against a bound split into its terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub observed: f64,
    pub bound: f64,
    pub epsilon_term: f64,
    pub variance_term: f64,
    /// Zero for bounds without a bias term.
    pub bias_term: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub seed: u64,
    pub n: usize,
    pub classes: usize,
    pub bins: usize,
    pub gamma: Option<f64>,
    pub holds: bool,
}

/// Share of reports whose bound holds.
pub fn hold_rate(reports: &[BoundReport]) -> f64 {
    if reports.is_empty() {
        return f64::NAN;
    }
    reports.iter().filter(|r| r.holds).count() as f64 / reports.len() as f64
}

use rayon::prelude::*;

use crate::binning::BinningScheme;
use crate::dataset::{CalibrationDataset, ProbabilityMatrix};
use crate::error::Result;
use crate::kernels::KernelConfig;
use crate::synth::{generate, inject_local_miscalibration, Generator, InjectionMode, Mixture, SynthSpec};

const SAMPLE_SALT: u64 = 0x5eed_0003;

/// A dataset from `spec` with predictions within `epsilon` (l1, per row) of
/// the true conditionals. Returns the realized tolerance.
pub fn constructed_sample(spec: &SynthSpec, epsilon: f64) -> Result<(CalibrationDataset, ProbabilityMatrix, f64)> {
    let (d, truth) = generate(spec)?;
    let inj = inject_local_miscalibration(&d, &truth, epsilon, InjectionMode::UniformL1, spec.seed ^ SAMPLE_SALT)?;
    let eps = inj.max_realized();
    Ok((d, inj.probs, eps))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem3Config {
    pub seeds: Vec<u64>,
    /// Generator; `seed` is replaced per run.
    pub spec: SynthSpec,
    pub gamma: f64,
    pub exclude_self: bool,
    pub epsilon: f64,
    pub delta: f64,
    pub bins: usize,
    pub min_bin_size: usize,
}

impl Default for Theorem3Config {
    fn default() -> Self {
        Self {
            seeds: (0..20).collect(),
            spec: SynthSpec {
                generator: Generator::GaussianMixture {
                    mixture: Mixture::axis_aligned(3, 3, 2.0, 1.0),
                },
                n: 600,
                seed: 0,
            },
            gamma: 1.0,
            exclude_self: false,
            epsilon: 0.05,
            delta: 0.05,
            bins: 15,
            min_bin_size: 20,
        }
    }
}

pub fn run_theorem3(cfg: &Theorem3Config) -> Result<Vec<BoundReport>> {
    let kernel = KernelConfig::new(cfg.gamma, cfg.exclude_self)?;
    let scheme = BinningScheme::equal_width(cfg.bins, cfg.min_bin_size);
    cfg.seeds
        .par_iter()
        .map(|&seed| {
            let spec = SynthSpec { seed, ..cfg.spec.clone() };
            let (d, p, eps) = constructed_sample(&spec, cfg.epsilon)?;
            verify_theorem3(p.view(), d.labels(), d.features(), d.priors(), Some(eps), &kernel, cfg.delta, &scheme, seed)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem5Config {
    pub seeds: Vec<u64>,
    pub spec: SynthSpec,
    pub epsilon: f64,
    pub k: usize,
    pub delta: f64,
    pub bins: usize,
    pub min_half: usize,
    /// Reassign the sparsest quarter of every confidence bin to class 0.
    pub biased: bool,
}

impl Default for Theorem5Config {
    fn default() -> Self {
        Self {
            seeds: (0..20).collect(),
            spec: SynthSpec::benchmark(2000, 0),
            epsilon: 0.05,
            k: 5,
            delta: 0.05,
            bins: 15,
            min_half: 10,
            biased: false,
        }
    }
}

pub fn run_theorem5(cfg: &Theorem5Config) -> Result<Vec<(u64, ProximityReport)>> {
    cfg.seeds
        .par_iter()
        .map(|&seed| {
            let spec = SynthSpec { seed, ..cfg.spec.clone() };
            let (d, p, eps) = constructed_sample(&spec, cfg.epsilon)?;
            let labels = if cfg.biased {
                let scores = proximity_scores(d.features(), cfg.k)?;
                proximity_biased_labels(p.view(), d.labels(), &scores, cfg.bins, 0.75, 0)
            } else {
                d.labels().to_vec()
            };
            let r = verify_theorem5(p.view(), &labels, d.features(), eps, cfg.k, cfg.delta, cfg.bins, cfg.min_half)?;
            Ok((seed, r))
        })
        .collect()
}
