//! Post-hoc calibrators behind one fit/apply contract.

mod dirichlet;
mod isotonic;
mod platt;
mod temperature;

pub use dirichlet::{fit_dirichlet, DirichletParams};
pub use isotonic::{fit_isotonic, fit_isotonic_map, IsotonicMap, IsotonicParams};
pub use platt::{binary_nll, check_class, fit_platt, fit_sigmoid, PlattParams};
pub use temperature::{fit_temperature, temperature_nll, T_MAX, T_MIN};

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dataset::{replace_representation, CalibrationDataset, ProbabilityMatrix};
use crate::error::{Error, Result};
use crate::lcn::{train_lcn, LcnConfig, LcnModel, TrainTrace};
use crate::numerics::{softmax_rows, Rng};

const STREAM_SPLIT: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Held-out share used for early stopping.
    pub val_frac: f64,
    pub seed: u64,
    pub lr: f64,
    pub max_steps: usize,
    /// Steps without validation improvement before stopping.
    pub patience: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            val_frac: 0.1,
            seed: 0,
            lr: 1e-2,
            max_steps: 2000,
            patience: 100,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.val_frac > 0.0 && self.val_frac < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "validation fraction must lie in (0, 1), got {}",
                self.val_frac
            )));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {}", self.lr)));
        }
        Ok(())
    }

    /// Seeded (train, validation) row indices, each sorted. Falls back to
    /// using every row for both when either side would have fewer than 2.
    pub fn split(&self, n: usize) -> (Vec<usize>, Vec<usize>) {
        let mut order: Vec<usize> = (0..n).collect();
        Rng::stream(self.seed, STREAM_SPLIT).shuffle(&mut order);
        let n_val = (self.val_frac * n as f64).round() as usize;
        if n_val < 2 || n < n_val + 2 {
            return ((0..n).collect(), (0..n).collect());
        }
        let mut val = order[..n_val].to_vec();
        let mut train = order[n_val..].to_vec();
        val.sort_unstable();
        train.sort_unstable();
        (train, val)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Temperature,
    Platt,
    Isotonic,
    Dirichlet,
    Lcn,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Temperature,
        Method::Platt,
        Method::Isotonic,
        Method::Dirichlet,
        Method::Lcn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Temperature => "ts",
            Method::Platt => "platt",
            Method::Isotonic => "isotonic",
            Method::Dirichlet => "dirichlet",
            Method::Lcn => "lcn",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown calibration method '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Calibrator {
    Temperature { t: f64 },
    Platt(PlattParams),
    Isotonic(IsotonicParams),
    Dirichlet(DirichletParams),
    Lcn(Box<LcnModel>),
}

/// Output of [`Calibrator::apply_detailed`].
#[derive(Debug, Clone, PartialEq)]
pub struct Applied {
    pub probs: ProbabilityMatrix,
    /// Learned representation, for calibrators that produce one.
    pub features: Option<Array2<f64>>,
    /// Rows that mapped to all zeros and were replaced by the uniform row.
    pub uniform_rows: usize,
}

/// A fitted calibrator with the settings that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Fitted {
    pub calibrator: Calibrator,
    pub fingerprint: String,
    pub lcn_trace: Option<TrainTrace>,
}

pub fn fit(method: Method, cal: &CalibrationDataset, cfg: &FitConfig, lcn: &LcnConfig) -> Result<Fitted> {
    cfg.validate()?;
    let calibrator = match method {
        Method::Temperature => Calibrator::Temperature {
            t: fit_temperature(cal)?,
        },
        Method::Platt => Calibrator::Platt(fit_platt(cal)?),
        Method::Isotonic => Calibrator::Isotonic(fit_isotonic(cal)?),
        Method::Dirichlet => Calibrator::Dirichlet(fit_dirichlet(cal, cfg)?),
        Method::Lcn => {
            let (model, trace) = train_lcn(cal, lcn)?;
            return Ok(Fitted {
                fingerprint: fingerprint(method, cal.classes(), cfg, Some(lcn)),
                calibrator: Calibrator::Lcn(Box::new(model)),
                lcn_trace: Some(trace),
            });
        }
    };
    Ok(Fitted {
        fingerprint: fingerprint(method, cal.classes(), cfg, None),
        calibrator,
        lcn_trace: None,
    })
}

fn fingerprint(method: Method, c: usize, cfg: &FitConfig, lcn: Option<&LcnConfig>) -> String {
    let mut s = format!("method={method};C={c}");
    match method {
        Method::Dirichlet => s += &format!(
            ";val_frac={};seed={};lr={};max_steps={};patience={}",
            cfg.val_frac, cfg.seed, cfg.lr, cfg.max_steps, cfg.patience
        ),
        Method::Platt => s += &format!(";steps={};lr={};multiclass=one-vs-rest", platt::PLATT_STEPS, platt::PLATT_LR),
        Method::Temperature => s += &format!(";bracket=[{T_MIN},{T_MAX}]"),
        Method::Isotonic => s += ";interp=right-continuous-step",
        Method::Lcn => {
            if let Some(l) = lcn {
                s += &format!(
                    ";hidden={};dropout={};lambda={};gamma={};pca_dim={};lr={};epochs={};batch={};seed={};exclude_self={};val_frac={}",
                    l.hidden, l.dropout, l.lambda, l.gamma, l.pca_dim, l.lr, l.epochs, l.batch_size, l.seed, l.exclude_self, l.val_frac
                );
            }
        }
    }
    s
}

/// Divides each row by its sum; rows summing to zero become uniform.
fn renormalize(mut q: Array2<f64>) -> (Array2<f64>, usize) {
    let c = q.ncols() as f64;
    let mut uniform = 0;
    for mut row in q.rows_mut() {
        let s: f64 = row.sum();
        if s > 0.0 && s.is_finite() {
            row.mapv_inplace(|v| v / s);
        } else {
            row.fill(1.0 / c);
            uniform += 1;
        }
    }
    (q, uniform)
}

impl Calibrator {
    pub fn method(&self) -> Method {
        match self {
            Calibrator::Temperature { .. } => Method::Temperature,
            Calibrator::Platt(_) => Method::Platt,
            Calibrator::Isotonic(_) => Method::Isotonic,
            Calibrator::Dirichlet(_) => Method::Dirichlet,
            Calibrator::Lcn(_) => Method::Lcn,
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            Calibrator::Temperature { .. } => 0,
            Calibrator::Platt(p) => p.a.len(),
            Calibrator::Isotonic(p) => p.maps.len(),
            Calibrator::Dirichlet(p) => p.b.len(),
            Calibrator::Lcn(m) => m.classes(),
        }
    }

    fn check_classes(&self, d: &CalibrationDataset) -> Result<()> {
        let c = self.classes();
        if c != 0 && c != d.classes() {
            return Err(Error::ClassCountMismatch {
                expected: c,
                found: d.classes(),
            });
        }
        Ok(())
    }

    pub fn apply(&self, d: &CalibrationDataset) -> Result<ProbabilityMatrix> {
        Ok(self.apply_detailed(d)?.probs)
    }

    pub fn apply_detailed(&self, d: &CalibrationDataset) -> Result<Applied> {
        self.check_classes(d)?;
        let mut features = None;
        let mut uniform_rows = 0;
        let probs = match self {
            Calibrator::Temperature { t } => softmax_rows(d.logits().mapv(|z| z / t).view())?,
            Calibrator::Platt(p) => {
                let z = d.logits();
                let q = Array2::from_shape_fn(z.dim(), |(i, k)| platt::sigmoid(p.a[k] * z[[i, k]] + p.b[k]));
                let (q, u) = renormalize(q);
                uniform_rows = u;
                q
            }
            Calibrator::Isotonic(p) => {
                let raw = d.probs();
                let raw = raw.view();
                let q = Array2::from_shape_fn(raw.dim(), |(i, k)| p.maps[k].eval(raw[[i, k]]));
                let (q, u) = renormalize(q);
                uniform_rows = u;
                q
            }
            Calibrator::Dirichlet(p) => p.apply(d.probs().view())?,
            Calibrator::Lcn(m) => {
                let (phi, _, probs) = m.forward(d.features(), d.logits())?;
                features = Some(phi);
                probs
            }
        };
        if uniform_rows > 0 {
            log::warn!("{}: {uniform_rows} rows mapped to zero and were set to uniform", self.method());
        }
        Ok(Applied {
            probs: ProbabilityMatrix::new(probs)?,
            features,
            uniform_rows,
        })
    }

    /// The dataset with calibrated logits (`ln q`, shift-normalized) and, for
    /// an LCN, the learned representation as its features.
    pub fn apply_to_dataset(&self, d: &CalibrationDataset) -> Result<CalibrationDataset> {
        let out = self.apply_detailed(d)?;
        let logits = out.probs.to_logits();
        let features = out.features.unwrap_or_else(|| d.features().to_owned());
        replace_representation(d, features, logits)
    }

    fn params_json(&self) -> Result<Value> {
        let v = match self {
            Calibrator::Temperature { t } => json!({ "T": t }),
            Calibrator::Platt(p) => serde_json::to_value(p)?,
            Calibrator::Isotonic(p) => serde_json::to_value(p)?,
            Calibrator::Dirichlet(p) => json!({ "W": p.w, "b": p.b }),
            Calibrator::Lcn(m) => serde_json::to_value(m.as_ref())?,
        };
        Ok(v)
    }
}

impl Fitted {
    pub fn to_json(&self) -> Result<String> {
        let c = &self.calibrator;
        let classes = match c {
            Calibrator::Temperature { .. } => Value::Null,
            _ => json!(c.classes()),
        };
        let v = json!({
            "method": c.method().as_str(),
            "params": c.params_json()?,
            "C": classes,
            "fingerprint": self.fingerprint,
        });
        Ok(serde_json::to_string_pretty(&v)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text)?;
        let method: Method = v
            .get("method")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::ModelFormat("missing \"method\"".into()))?
            .parse()
            .map_err(|e: Error| Error::ModelFormat(e.to_string()))?;
        let params = v.get("params").cloned().ok_or_else(|| Error::ModelFormat("missing \"params\"".into()))?;
        let fingerprint = v.get("fingerprint").and_then(Value::as_str).unwrap_or_default().to_string();
        let calibrator = match method {
            Method::Temperature => {
                let t = params
                    .get("T")
                    .and_then(Value::as_f64)
                    .filter(|t| *t > 0.0 && t.is_finite())
                    .ok_or_else(|| Error::ModelFormat("temperature must be a positive number".into()))?;
                Calibrator::Temperature { t }
            }
            Method::Platt => Calibrator::Platt(serde_json::from_value(params)?),
            Method::Isotonic => {
                let p: IsotonicParams = serde_json::from_value(params)?;
                for m in &p.maps {
                    let ok = !m.knots.is_empty()
                        && m.knots.len() == m.values.len()
                        && m.values.windows(2).all(|w| w[0] <= w[1])
                        && m.values.iter().all(|v| (0.0..=1.0).contains(v));
                    if !ok {
                        return Err(Error::ModelFormat("isotonic map must be nondecreasing in [0, 1]".into()));
                    }
                }
                Calibrator::Isotonic(p)
            }
            Method::Dirichlet => {
                #[derive(Deserialize)]
                struct Raw {
                    #[serde(rename = "W")]
                    w: Vec<Vec<f64>>,
                    b: Vec<f64>,
                }
                let r: Raw = serde_json::from_value(params)?;
                if r.w.len() != r.b.len() || r.w.iter().any(|row| row.len() != r.b.len()) {
                    return Err(Error::ModelFormat("dirichlet W must be C x C with C = len(b)".into()));
                }
                Calibrator::Dirichlet(DirichletParams { w: r.w, b: r.b })
            }
            Method::Lcn => Calibrator::Lcn(Box::new(serde_json::from_value(params)?)),
        };
        if let Some(c) = v.get("C").and_then(Value::as_u64) {
            if calibrator.classes() != 0 && calibrator.classes() as u64 != c {
                return Err(Error::ModelFormat(format!("\"C\" is {c} but parameters have {}", calibrator.classes())));
            }
        }
        Ok(Fitted {
            calibrator,
            fingerprint,
            lcn_trace: None,
        })
    }
}
