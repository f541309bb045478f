//! LoCal Net: a one-hidden-layer network with two residual heads, producing
//! reduced features `phi'` and recalibrated logits `g'`.
//!
//! ```text
//! h    = relu(W1 x + b1)                      (inverted dropout when training)
//! phi' = Wf h + bf + w_phi * pca(x) + b_phi
//! g'   = Wg h + bg_vec + w_g * g(x) + b_g
//! p    = softmax(g')
//! ```

mod consistency;
mod loss;
mod train;

pub use consistency::{jsd_consistency_experiment, median_gaps, ConsistencyRow, ConsistencySpec};
pub use loss::{lcn_backward, lcn_loss, loss_and_output_grads, LossParts};
pub use train::{train_lcn, EpochTrace, TrainTrace};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{softmax_into, PcaProjection, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LcnConfig {
    pub hidden: usize,
    pub dropout: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub pca_dim: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub exclude_self: bool,
    /// Share of the calibration rows held out for model selection.
    pub val_frac: f64,
}

impl Default for LcnConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            dropout: 0.3,
            lambda: 1.0,
            gamma: 10.0,
            pca_dim: 50,
            lr: 1e-3,
            epochs: 22,
            batch_size: 1024,
            seed: 0,
            exclude_self: true,
            val_frac: 0.1,
        }
    }
}

impl LcnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidArgument(format!("lambda must be nonnegative, got {}", self.lambda)));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::InvalidArgument(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidArgument("batch size must be at least 2".into()));
        }
        if self.hidden == 0 || self.pca_dim == 0 {
            return Err(Error::InvalidArgument("hidden and pca dimensions must be positive".into()));
        }
        if !(self.val_frac >= 0.0 && self.val_frac < 1.0) {
            return Err(Error::InvalidArgument(format!("validation fraction must lie in [0, 1), got {}", self.val_frac)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LcnParams {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub wf: Array2<f64>,
    pub bf: Array1<f64>,
    pub wg: Array2<f64>,
    pub bg_vec: Array1<f64>,
    pub w_phi: f64,
    pub b_phi: f64,
    pub w_g: f64,
    pub b_g: f64,
}

impl LcnParams {
    pub fn len(&self) -> usize {
        self.w1.len() + self.b1.len() + self.wf.len() + self.bf.len() + self.wg.len() + self.bg_vec.len() + 4
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w1: Array2::zeros(self.w1.raw_dim()),
            b1: Array1::zeros(self.b1.len()),
            wf: Array2::zeros(self.wf.raw_dim()),
            bf: Array1::zeros(self.bf.len()),
            wg: Array2::zeros(self.wg.raw_dim()),
            bg_vec: Array1::zeros(self.bg_vec.len()),
            w_phi: 0.0,
            b_phi: 0.0,
            w_g: 0.0,
            b_g: 0.0,
        }
    }

    /// Parameters in a fixed order: W1, b1, Wf, bf, Wg, bg_vec, w_phi, b_phi, w_g, b_g.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend(self.w1.iter());
        v.extend(self.b1.iter());
        v.extend(self.wf.iter());
        v.extend(self.bf.iter());
        v.extend(self.wg.iter());
        v.extend(self.bg_vec.iter());
        v.extend([self.w_phi, self.b_phi, self.w_g, self.b_g]);
        v
    }

    pub fn set_flat(&mut self, v: &[f64]) {
        let mut it = v.iter().copied();
        for t in self
            .w1
            .iter_mut()
            .chain(self.b1.iter_mut())
            .chain(self.wf.iter_mut())
            .chain(self.bf.iter_mut())
            .chain(self.wg.iter_mut())
            .chain(self.bg_vec.iter_mut())
        {
            *t = it.next().expect("flat length");
        }
        self.w_phi = it.next().expect("flat length");
        self.b_phi = it.next().expect("flat length");
        self.w_g = it.next().expect("flat length");
        self.b_g = it.next().expect("flat length");
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LcnModel {
    pub pca: PcaProjection,
    pub params: LcnParams,
    pub config: LcnConfig,
    pub activation: String,
}

/// Per-row quantities kept from the forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub input: Array2<f64>,
    pub pre: Array2<f64>,
    pub hidden: Array2<f64>,
    /// Dropout multipliers (0 or 1/(1-rate)); all ones in eval mode.
    pub mask: Array2<f64>,
    pub pca: Array2<f64>,
    pub logits_in: Array2<f64>,
    pub phi: Array2<f64>,
    pub g: Array2<f64>,
    pub probs: Array2<f64>,
}

impl LcnModel {
    /// Zero heads, He-initialized hidden layer, residual weights 1 and
    /// residual biases drawn from N(0, 0.01^2).
    pub fn init(pca: PcaProjection, classes: usize, config: &LcnConfig, rng: &mut Rng) -> Self {
        let m = pca.input_dim();
        let d = pca.dim();
        let h = config.hidden;
        let scale = (2.0 / m.max(1) as f64).sqrt();
        let w1 = Array2::from_shape_fn((h, m), |_| scale * rng.normal());
        let b_phi = 0.01 * rng.normal();
        let b_g = 0.01 * rng.normal();
        Self {
            pca,
            params: LcnParams {
                w1,
                b1: Array1::zeros(h),
                wf: Array2::zeros((d, h)),
                bf: Array1::zeros(d),
                wg: Array2::zeros((classes, h)),
                bg_vec: Array1::zeros(classes),
                w_phi: 1.0,
                b_phi,
                w_g: 1.0,
                b_g,
            },
            config: config.clone(),
            activation: "relu".into(),
        }
    }

    pub fn classes(&self) -> usize {
        self.params.wg.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.params.w1.ncols()
    }

    pub fn feature_dim(&self) -> usize {
        self.params.wf.nrows()
    }

    /// Forward pass. `rng` drives dropout and is only consulted in train mode.
    pub fn forward_cached(
        &self,
        features: ArrayView2<f64>,
        logits: ArrayView2<f64>,
        train_mode: bool,
        rng: Option<&mut Rng>,
    ) -> Result<ForwardCache> {
        let n = features.nrows();
        if features.ncols() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "model expects {} features, got {}",
                self.input_dim(),
                features.ncols()
            )));
        }
        if logits.ncols() != self.classes() || logits.nrows() != n {
            return Err(Error::ShapeMismatch(format!(
                "model expects {n} x {} logits, got {:?}",
                self.classes(),
                logits.dim()
            )));
        }
        let p = &self.params;
        let pre = features.dot(&p.w1.t()) + p.b1.view().insert_axis(Axis(0));
        let h = p.w1.nrows();
        let rate = self.config.dropout;
        let mask = match (train_mode && rate > 0.0, rng) {
            (true, Some(rng)) => {
                let keep = 1.0 / (1.0 - rate);
                Array2::from_shape_fn((n, h), |_| if rng.uniform() < rate { 0.0 } else { keep })
            }
            (true, None) => {
                return Err(Error::InvalidArgument("train-mode forward needs an rng for dropout".into()));
            }
            _ => Array2::ones((n, h)),
        };
        let hidden = pre.mapv(|v| v.max(0.0)) * &mask;
        let pca = self.pca.project(features)?;
        let phi = hidden.dot(&p.wf.t()) + p.bf.view().insert_axis(Axis(0)) + &(&pca * p.w_phi) + p.b_phi;
        let g = hidden.dot(&p.wg.t()) + p.bg_vec.view().insert_axis(Axis(0)) + &(&logits * p.w_g) + p.b_g;
        let mut probs = Array2::zeros(g.raw_dim());
        let mut buf = vec![0.0; g.ncols()];
        for (i, row) in g.rows().into_iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("non-finite logit in row {i}")));
            }
            softmax_into(&row.to_vec(), &mut buf);
            probs.row_mut(i).assign(&Array1::from(buf.clone()));
        }
        Ok(ForwardCache {
            input: features.to_owned(),
            pre,
            hidden,
            mask,
            pca,
            logits_in: logits.to_owned(),
            phi,
            g,
            probs,
        })
    }

    /// `(phi', g', softmax(g'))` in eval mode.
    pub fn forward(&self, features: ArrayView2<f64>, logits: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>, Array2<f64>)> {
        let c = self.forward_cached(features, logits, false, None)?;
        Ok((c.phi, c.g, c.probs))
    }
}

/// `(phi', softmax(g'))`, with dropout when `train_mode` is set.
pub fn lcn_forward(
    model: &LcnModel,
    features: ArrayView2<f64>,
    logits: ArrayView2<f64>,
    train_mode: bool,
    rng: &mut Rng,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let c = model.forward_cached(features, logits, train_mode, Some(rng))?;
    Ok((c.phi, c.probs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{fit_pca, softmax_rows};

    fn setup() -> (LcnModel, Array2<f64>, Array2<f64>) {
        let mut rng = Rng::new(1);
        let x = Array2::from_shape_fn((20, 4), |_| rng.normal());
        let z = Array2::from_shape_fn((20, 3), |_| rng.normal());
        let pca = fit_pca(x.view(), 3).unwrap();
        let mut model = LcnModel::init(pca, 3, &LcnConfig::default(), &mut rng);
        model.params.b_g = 0.0;
        model.params.b_phi = 0.0;
        (model, x, z)
    }

    #[test]
    fn residual_identity_at_init() {
        let (model, x, z) = setup();
        let (phi, _, probs) = model.forward(x.view(), z.view()).unwrap();
        assert_eq!(probs, softmax_rows(z.view()).unwrap());
        assert_eq!(phi, model.pca.project(x.view()).unwrap());
    }

    #[test]
    fn eval_is_deterministic_and_train_drops() {
        let (model, x, z) = setup();
        let a = model.forward(x.view(), z.view()).unwrap();
        let b = model.forward(x.view(), z.view()).unwrap();
        assert_eq!(a, b);
        let c = model.forward_cached(x.view(), z.view(), true, Some(&mut Rng::new(4))).unwrap();
        assert!(c.mask.iter().any(|&v| v == 0.0));
        assert!(c.mask.iter().all(|&v| v == 0.0 || (v - 1.0 / 0.7).abs() < 1e-15));
    }

    #[test]
    fn flat_round_trip() {
        let (model, _, _) = setup();
        let flat = model.params.to_flat();
        assert_eq!(flat.len(), model.params.len());
        let mut other = model.params.zeros_like();
        other.set_flat(&flat);
        assert_eq!(other, model.params);
    }

    #[test]
    fn shape_mismatch() {
        let (model, x, _) = setup();
        let bad = Array2::zeros((20, 2));
        assert!(matches!(model.forward(x.view(), bad.view()), Err(Error::ShapeMismatch(_))));
    }
}
