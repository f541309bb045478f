//! Synthetic datasets whose class conditionals are known in closed form.

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{CalibrationDataset, ProbabilityMatrix};
use crate::error::{Error, Result};
use crate::numerics::{log_sum_exp, Rng};

/// Isotropic Gaussian mixture: class `c` has mean `means[c]` and covariance
/// `sigma^2 I`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mixture {
    pub means: Vec<Vec<f64>>,
    pub sigma: f64,
    pub priors: Vec<f64>,
}

/// Mean separation that puts the default benchmark's Bayes accuracy near 0.85.
pub const BENCHMARK_SEPARATION: f64 = 21.5;
pub const BENCHMARK_SIGMA: f64 = 10.0;

impl Mixture {
    /// Class `c` centred at `separation * e_c` in `dim` dimensions.
    pub fn axis_aligned(classes: usize, dim: usize, separation: f64, sigma: f64) -> Self {
        let means = (0..classes)
            .map(|c| (0..dim).map(|j| if j == c { separation } else { 0.0 }).collect())
            .collect();
        Self {
            means,
            sigma,
            priors: vec![1.0 / classes as f64; classes],
        }
    }

    /// Four classes in eight dimensions.
    pub fn benchmark() -> Self {
        Self::axis_aligned(4, 8, BENCHMARK_SEPARATION, BENCHMARK_SIGMA)
    }

    pub fn classes(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.classes();
        if c < 2 {
            return Err(Error::SpecInvalid(format!("need at least 2 classes, got {c}")));
        }
        let m = self.dim();
        if m == 0 || self.means.iter().any(|mu| mu.len() != m) {
            return Err(Error::SpecInvalid("means must share one positive dimension".into()));
        }
        if self.means.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::SpecInvalid("means must be finite".into()));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::SpecInvalid(format!("sigma must be positive, got {}", self.sigma)));
        }
        let sum: f64 = self.priors.iter().sum();
        if self.priors.len() != c || self.priors.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::SpecInvalid("priors must be a probability vector over the classes".into()));
        }
        for a in 0..c {
            for b in a + 1..c {
                if self.means[a] == self.means[b] {
                    return Err(Error::SpecInvalid(format!("classes {a} and {b} share a mean")));
                }
            }
        }
        Ok(())
    }

    /// `ln p(y = c | x)` for every class.
    pub fn log_posterior(&self, x: &[f64]) -> Vec<f64> {
        let s2 = 2.0 * self.sigma * self.sigma;
        let joint: Vec<f64> = self
            .means
            .iter()
            .zip(&self.priors)
            .map(|(mu, &p)| {
                let d2: f64 = mu.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                if p > 0.0 {
                    p.ln() - d2 / s2
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        let lse = log_sum_exp(&joint);
        joint.into_iter().map(|v| v - lse).collect()
    }

    pub fn posterior(&self, x: &[f64]) -> Vec<f64> {
        self.log_posterior(x).into_iter().map(f64::exp).collect()
    }

    fn sample_row(&self, rng: &mut Rng) -> (Vec<f64>, usize) {
        let y = rng.categorical(&self.priors);
        let x = self.means[y].iter().map(|mu| mu + self.sigma * rng.normal()).collect();
        (x, y)
    }
}

pub const TOY_PROBS: [f64; 6] = [0.9, 0.6, 0.6, 0.4, 0.4, 0.1];
pub const TOY_FREQS: [f64; 6] = [0.95, 0.55, 0.65, 0.35, 0.45, 0.05];
pub const TOY_NAMES: [&str; 6] = ["A", "B", "C", "D", "E", "F"];
pub const TOY_DEFAULT_SIZES: [u64; 6] = [350, 75, 75, 75, 75, 350];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    GaussianMixture {
        mixture: Mixture,
    },
    /// Logits `T ln p_true`. With `regional`, `T` applies on the half-space
    /// `x_0 >= 0` and `1/T` elsewhere.
    TemperatureCorrupted {
        mixture: Mixture,
        temperature: f64,
        #[serde(default)]
        regional: bool,
    },
    /// The six-region binary example; `n` is ignored and labels are assigned
    /// deterministically so each region hits its frequency as closely as
    /// its size allows.
    ToyRegions {
        sizes: [u64; 6],
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub generator: Generator,
    pub n: usize,
    pub seed: u64,
}

impl SynthSpec {
    /// The default benchmark: four classes in eight dimensions, regional
    /// temperature corruption.
    pub fn benchmark(n: usize, seed: u64) -> Self {
        Self {
            generator: Generator::TemperatureCorrupted {
                mixture: Mixture::benchmark(),
                temperature: 2.5,
                regional: true,
            },
            n,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.generator {
            Generator::GaussianMixture { mixture } => mixture.validate()?,
            Generator::TemperatureCorrupted { mixture, temperature, .. } => {
                mixture.validate()?;
                if !(*temperature > 0.0) || !temperature.is_finite() {
                    return Err(Error::SpecInvalid(format!("temperature must be positive, got {temperature}")));
                }
            }
            Generator::ToyRegions { sizes } => {
                if sizes.contains(&0) {
                    return Err(Error::SpecInvalid("toy region sizes must be positive".into()));
                }
                return Ok(());
            }
        }
        if self.n == 0 {
            return Err(Error::SpecInvalid("n must be positive".into()));
        }
        Ok(())
    }

    /// Parses the key-value config format documented in the CLI reference.
    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: RawSpec = toml::from_str(text).map_err(|e| Error::SpecInvalid(e.to_string()))?;
        raw.resolve()
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    generator: String,
    #[serde(default = "default_n")]
    n: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_classes")]
    classes: usize,
    #[serde(default = "default_dim")]
    dim: usize,
    #[serde(default = "default_separation")]
    separation: f64,
    #[serde(default = "default_sigma")]
    sigma: f64,
    priors: Option<Vec<f64>>,
    means: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_temperature")]
    temperature: f64,
    #[serde(default)]
    regional: bool,
    sizes: Option<[u64; 6]>,
}

fn default_n() -> usize {
    20_000
}
fn default_classes() -> usize {
    4
}
fn default_dim() -> usize {
    8
}
fn default_separation() -> f64 {
    BENCHMARK_SEPARATION
}
fn default_sigma() -> f64 {
    BENCHMARK_SIGMA
}
fn default_temperature() -> f64 {
    1.0
}

impl RawSpec {
    fn resolve(self) -> Result<SynthSpec> {
        let mixture = || -> Result<Mixture> {
            let mut m = match &self.means {
                Some(means) => Mixture {
                    priors: vec![1.0 / means.len().max(1) as f64; means.len()],
                    means: means.clone(),
                    sigma: self.sigma,
                },
                None => {
                    if self.dim < self.classes {
                        return Err(Error::SpecInvalid(format!(
                            "axis-aligned means need dim >= classes ({} < {})",
                            self.dim, self.classes
                        )));
                    }
                    Mixture::axis_aligned(self.classes, self.dim, self.separation, self.sigma)
                }
            };
            if let Some(p) = &self.priors {
                m.priors = p.clone();
            }
            Ok(m)
        };
        let generator = match self.generator.as_str() {
            "gaussian_mixture" => Generator::GaussianMixture { mixture: mixture()? },
            "temperature_corrupted" => Generator::TemperatureCorrupted {
                mixture: mixture()?,
                temperature: self.temperature,
                regional: self.regional,
            },
            "toy_regions" => Generator::ToyRegions {
                sizes: self.sizes.unwrap_or(TOY_DEFAULT_SIZES),
            },
            other => return Err(Error::SpecInvalid(format!("unknown generator {other:?}"))),
        };
        let spec = SynthSpec {
            generator,
            n: self.n,
            seed: self.seed,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Samples a dataset together with the exact conditionals `p(y | x)`.
/// Row `i` draws from stream `i` of the seed, so output is independent of
/// the thread count.
pub fn generate(spec: &SynthSpec) -> Result<(CalibrationDataset, ProbabilityMatrix)> {
    spec.validate()?;
    match &spec.generator {
        Generator::GaussianMixture { mixture } => sample_mixture(mixture, spec.n, spec.seed, |_, lp| lp.to_vec()),
        Generator::TemperatureCorrupted {
            mixture,
            temperature,
            regional,
        } => {
            let t = *temperature;
            let regional = *regional;
            sample_mixture(mixture, spec.n, spec.seed, move |x, lp| {
                let scale = if regional && x[0] < 0.0 { 1.0 / t } else { t };
                lp.iter().map(|v| scale * v).collect()
            })
        }
        Generator::ToyRegions { sizes } => Ok(toy_dataset(sizes)),
    }
}

type SampledRow = (Vec<f64>, usize, Vec<f64>, Vec<f64>);

fn sample_mixture<F>(mix: &Mixture, n: usize, seed: u64, logit_map: F) -> Result<(CalibrationDataset, ProbabilityMatrix)>
where
    F: Fn(&[f64], &[f64]) -> Vec<f64> + Sync,
{
    let (c, m) = (mix.classes(), mix.dim());
    let rows: Vec<SampledRow> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = Rng::stream(seed, i as u64);
            let (x, y) = mix.sample_row(&mut rng);
            let lp = mix.log_posterior(&x);
            let mut z = logit_map(&x, &lp);
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            z.iter_mut().for_each(|v| *v = (*v - max).max(-700.0));
            let p = lp.iter().map(|v| v.exp()).collect();
            (x, y, z, p)
        })
        .collect();
    let mut feats = Array2::zeros((n, m));
    let mut logits = Array2::zeros((n, c));
    let mut truth = Array2::zeros((n, c));
    let mut labels = Vec::with_capacity(n);
    for (i, (x, y, z, p)) in rows.into_iter().enumerate() {
        feats.row_mut(i).assign(&Array1::from(x));
        logits.row_mut(i).assign(&Array1::from(z));
        truth.row_mut(i).assign(&Array1::from(p));
        labels.push(y);
    }
    let d = CalibrationDataset::new(feats, logits, labels, None)?;
    Ok((d, ProbabilityMatrix::new(truth)?))
}

/// Region `k` sits at a fixed point; its first `round(Y_k * size_k)` rows are
/// positives.
fn toy_dataset(sizes: &[u64; 6]) -> (CalibrationDataset, ProbabilityMatrix) {
    let n: u64 = sizes.iter().sum();
    let n = n as usize;
    let mut feats = Array2::zeros((n, 2));
    let mut logits = Array2::zeros((n, 2));
    let mut truth = Array2::zeros((n, 2));
    let mut labels = Vec::with_capacity(n);
    let mut row = 0;
    for k in 0..6 {
        let size = sizes[k] as usize;
        let positives = (TOY_FREQS[k] * size as f64).round() as usize;
        for r in 0..size {
            feats[[row, 0]] = k as f64;
            feats[[row, 1]] = TOY_PROBS[k];
            logits[[row, 1]] = (TOY_PROBS[k] / (1.0 - TOY_PROBS[k])).ln();
            truth[[row, 0]] = 1.0 - TOY_FREQS[k];
            truth[[row, 1]] = TOY_FREQS[k];
            labels.push(usize::from(r < positives));
            row += 1;
        }
    }
    let d = CalibrationDataset::new(feats, logits, labels, None).expect("toy rows are valid");
    (d, ProbabilityMatrix::new(truth).expect("toy conditionals are on the simplex"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionMode {
    /// A fresh zero-sum direction per row.
    UniformL1,
    /// One zero-sum direction shared by every row.
    PerClass,
}

#[derive(Debug, Clone)]
pub struct Injected {
    pub dataset: CalibrationDataset,
    pub probs: ProbabilityMatrix,
    /// Realized `|p_hat - p_true|_1` per row, at most the nominal epsilon.
    pub realized: Vec<f64>,
}

impl Injected {
    pub fn max_realized(&self) -> f64 {
        self.realized.iter().copied().fold(0.0, f64::max)
    }
}

/// Zero-sum direction with unit l1 norm.
fn zero_sum_direction(rng: &mut Rng, c: usize) -> Vec<f64> {
    loop {
        let mut u: Vec<f64> = (0..c).map(|_| rng.normal()).collect();
        let mean = u.iter().sum::<f64>() / c as f64;
        u.iter_mut().for_each(|v| *v -= mean);
        let l1: f64 = u.iter().map(|v| v.abs()).sum();
        if l1 > 1e-12 {
            u.iter_mut().for_each(|v| *v /= l1);
            return u;
        }
    }
}

/// Moves each row of `truth` by `t * eps * u` for a zero-sum unit-l1
/// direction `u`, with `t <= 1` the largest step that stays on the simplex.
/// Logits become `ln p_hat`, shifted so each row's maximum is 0.
pub fn inject_local_miscalibration(
    d: &CalibrationDataset,
    truth: &ProbabilityMatrix,
    epsilon: f64,
    mode: InjectionMode,
    seed: u64,
) -> Result<Injected> {
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be nonnegative, got {epsilon}")));
    }
    if epsilon > 2.0 {
        return Err(Error::EpsilonTooLarge {
            requested: epsilon,
            max_feasible: 2.0,
        });
    }
    let t = truth.view();
    if t.nrows() != d.n() || t.ncols() != d.classes() {
        return Err(Error::ShapeMismatch("conditionals do not match the dataset".into()));
    }
    let c = d.classes();
    let shared = match mode {
        InjectionMode::PerClass => Some(zero_sum_direction(&mut Rng::stream(seed, u64::MAX), c)),
        InjectionMode::UniformL1 => None,
    };
    let rows: Vec<(Vec<f64>, f64)> = (0..d.n())
        .into_par_iter()
        .map(|i| {
            let p = t.row(i);
            if epsilon == 0.0 {
                return (p.to_vec(), 0.0);
            }
            let u = shared.clone().unwrap_or_else(|| zero_sum_direction(&mut Rng::stream(seed, i as u64), c));
            let mut step: f64 = 1.0;
            for (pc, uc) in p.iter().zip(&u) {
                if *uc < 0.0 {
                    step = step.min(pc / (-uc * epsilon));
                }
            }
            let q: Vec<f64> = p.iter().zip(&u).map(|(pc, uc)| (pc + step * epsilon * uc).max(0.0)).collect();
            let s: f64 = q.iter().sum();
            let q: Vec<f64> = q.into_iter().map(|v| v / s).collect();
            let realized = q.iter().zip(p.iter()).map(|(a, b)| (a - b).abs()).sum();
            (q, realized)
        })
        .collect();
    let mut probs = Array2::zeros((d.n(), c));
    let mut realized = Vec::with_capacity(d.n());
    for (i, (q, r)) in rows.into_iter().enumerate() {
        probs.row_mut(i).assign(&Array1::from(q));
        realized.push(r);
    }
    let probs = ProbabilityMatrix::new(probs)?;
    let logits = probs.to_logits();
    let dataset = CalibrationDataset::new(d.features().to_owned(), logits, d.labels().to_vec(), Some(d.priors().to_vec()))?;
    Ok(Injected {
        dataset,
        probs,
        realized,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binning::BinningScheme;
    use crate::dataset::encode_binary;
    use crate::metrics::classwise_ece;

    fn two_gaussians() -> Mixture {
        Mixture {
            means: vec![vec![-1.0, 0.0], vec![1.0, 0.0]],
            sigma: 1.0,
            priors: vec![0.5, 0.5],
        }
    }

    #[test]
    fn midpoint_is_even() {
        let p = two_gaussians().posterior(&[0.0, 3.0]);
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn calibrated_generator_has_small_ece() {
        let spec = SynthSpec {
            generator: Generator::GaussianMixture {
                mixture: Mixture::benchmark(),
            },
            n: 100_000,
            seed: 3,
        };
        let (d, truth) = generate(&spec).unwrap();
        let probs = d.probs();
        for (a, b) in probs.view().iter().zip(truth.view().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        let ece = classwise_ece(probs.view(), d.labels(), &BinningScheme::equal_width(15, 0), d.priors()).unwrap();
        assert!(ece < 0.01, "ece = {ece}");
    }

    #[test]
    fn deterministic_bytes() {
        let spec = SynthSpec::benchmark(500, 9);
        let a = encode_binary(&generate(&spec).unwrap().0);
        let b = encode_binary(&generate(&spec).unwrap().0);
        assert_eq!(a, b);
    }

    #[test]
    fn identical_means_rejected() {
        let mut m = two_gaussians();
        m.means[1] = m.means[0].clone();
        let spec = SynthSpec {
            generator: Generator::GaussianMixture { mixture: m },
            n: 10,
            seed: 0,
        };
        assert!(matches!(generate(&spec), Err(Error::SpecInvalid(_))));
    }

    #[test]
    fn injection_budget() {
        let spec = SynthSpec {
            generator: Generator::GaussianMixture {
                mixture: Mixture::benchmark(),
            },
            n: 10_000,
            seed: 5,
        };
        let (d, truth) = generate(&spec).unwrap();
        let zero = inject_local_miscalibration(&d, &truth, 0.0, InjectionMode::UniformL1, 1).unwrap();
        assert_eq!(zero.probs, truth);
        let inj = inject_local_miscalibration(&d, &truth, 0.1, InjectionMode::UniformL1, 1).unwrap();
        let mut max_dev: f64 = 0.0;
        for (i, (p, q)) in inj.probs.view().rows().into_iter().zip(truth.view().rows()).enumerate() {
            let dev: f64 = p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum();
            assert!(dev <= 0.1 + 1e-12);
            assert!((dev - inj.realized[i]).abs() < 1e-12);
            max_dev = max_dev.max(dev);
        }
        assert!(max_dev >= 0.09);
        assert!(matches!(
            inject_local_miscalibration(&d, &truth, 2.5, InjectionMode::UniformL1, 1),
            Err(Error::EpsilonTooLarge { .. })
        ));
        let pc = inject_local_miscalibration(&d, &truth, 0.05, InjectionMode::PerClass, 1).unwrap();
        assert!(pc.max_realized() <= 0.05 + 1e-12);
    }

    #[test]
    fn toy_regions_recalibrate_to_point_six() {
        let (d, _) = generate(&SynthSpec {
            generator: Generator::ToyRegions { sizes: TOY_DEFAULT_SIZES },
            n: 0,
            seed: 0,
        })
        .unwrap();
        // pool regions B and C (p = 0.6 and density 0.075) and take their label mean
        let idx: Vec<usize> = (0..d.n()).filter(|&i| d.features()[[i, 0]] == 1.0 || d.features()[[i, 0]] == 2.0).collect();
        let pos = idx.iter().filter(|&&i| d.labels()[i] == 1).count();
        assert_eq!(pos as f64 / idx.len() as f64, 0.6);
    }

    #[test]
    fn toml_spec() {
        let s = SynthSpec::from_toml("generator = \"temperature_corrupted\"\nn = 100\nseed = 4\ntemperature = 3.0\n").unwrap();
        assert_eq!(s.n, 100);
        assert!(matches!(s.generator, Generator::TemperatureCorrupted { temperature, .. } if temperature == 3.0));
        assert!(SynthSpec::from_toml("generator = \"nope\"").is_err());
        assert!(SynthSpec::from_toml("generator = \"gaussian_mixture\"\nbogus = 1").is_err());
    }
}
