use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::dataset::CalibrationDataset;
use crate::error::{Error, Result};
use crate::synth::{TOY_NAMES, TOY_PROBS};

type Q = Ratio<i128>;

pub const TOY_DENSITIES: [f64; 6] = [0.35, 0.075, 0.075, 0.075, 0.075, 0.35];

/// Region frequencies, densities and predictions in exact form (per mille).
const FREQ_PM: [i128; 6] = [950, 550, 650, 350, 450, 50];
const DENSITY_PM: [i128; 6] = [350, 75, 75, 75, 75, 350];
const PROB_PM: [i128; 6] = [900, 600, 600, 400, 400, 100];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyRegionRow {
    pub name: String,
    pub size: u64,
    pub density: f64,
    pub p: f64,
    pub freq: f64,
    /// Recalibrated probability of the region's (confidence, density) group;
    /// absent when the whole group is empty.
    pub p_cal: Option<f64>,
    /// `p_cal - freq`.
    pub residual: Option<f64>,
    /// `p_cal` and the residual as `(numerator, denominator)` in lowest terms.
    pub p_cal_exact: Option<(i128, i128)>,
    pub residual_exact: Option<(i128, i128)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyReport {
    pub regions: Vec<ToyRegionRow>,
}

impl ToyReport {
    pub fn region(&self, name: &str) -> Option<&ToyRegionRow> {
        self.regions.iter().find(|r| r.name == name)
    }

    /// `p_cal` of the `p = 0.6`, low-density group made of regions B and C.
    pub fn p_cal_bc(&self) -> Option<(i128, i128)> {
        self.region("B").and_then(|r| r.p_cal_exact)
    }
}

fn pair(q: Q) -> (i128, i128) {
    (*q.numer(), *q.denom())
}

fn as_f64(q: Q) -> f64 {
    *q.numer() as f64 / *q.denom() as f64
}

/// Recalibration conditional on (confidence, density): every region in a
/// group receives the size-weighted mean of the group's frequencies.
fn recalibrate(sizes: &[u64; 6], freqs: &[Q; 6]) -> ToyReport {
    let regions = (0..6)
        .map(|k| {
            let group: Vec<usize> =
                (0..6).filter(|&j| PROB_PM[j] == PROB_PM[k] && DENSITY_PM[j] == DENSITY_PM[k]).collect();
            let total: i128 = group.iter().map(|&j| sizes[j] as i128).sum();
            let p_cal = (total > 0).then(|| {
                group.iter().fold(Q::from_integer(0), |acc, &j| acc + freqs[j] * Q::from_integer(sizes[j] as i128))
                    / Q::from_integer(total)
            });
            let residual = p_cal.map(|p| p - freqs[k]);
            ToyRegionRow {
                name: TOY_NAMES[k].to_string(),
                size: sizes[k],
                density: TOY_DENSITIES[k],
                p: TOY_PROBS[k],
                freq: as_f64(freqs[k]),
                p_cal: p_cal.map(as_f64),
                residual: residual.map(as_f64),
                p_cal_exact: p_cal.map(pair),
                residual_exact: residual.map(pair),
            }
        })
        .collect();
    ToyReport { regions }
}

/// The six-region example with the tabulated frequencies.
pub fn toy_example(sizes: &[u64; 6]) -> Result<ToyReport> {
    if sizes.iter().any(|&s| s > 1_000_000_000) {
        return Err(Error::InvalidArgument("toy region sizes must not exceed 1e9".into()));
    }
    if sizes.iter().all(|&s| s == 0) {
        return Err(Error::InvalidArgument("at least one toy region must be nonempty".into()));
    }
    let freqs = FREQ_PM.map(|f| Q::new(f, 1000));
    Ok(recalibrate(sizes, &freqs))
}

/// The same recalibration using the label counts of a dataset produced by
/// the toy generator (region index in feature 0, positives are class 1).
pub fn toy_empirical(d: &CalibrationDataset) -> Result<ToyReport> {
    if d.m() < 1 || d.classes() != 2 {
        return Err(Error::InvalidDataset("toy datasets have a region column and 2 classes".into()));
    }
    let mut sizes = [0u64; 6];
    let mut pos = [0i128; 6];
    for (row, &y) in d.features().rows().into_iter().zip(d.labels()) {
        let k = row[0];
        if !((0.0..6.0).contains(&k) && k.fract() == 0.0) {
            return Err(Error::InvalidDataset(format!("region index {k} is not one of 0..6")));
        }
        sizes[k as usize] += 1;
        pos[k as usize] += y as i128;
    }
    let freqs: [Q; 6] =
        std::array::from_fn(|k| if sizes[k] == 0 { Q::from_integer(0) } else { Q::new(pos[k], sizes[k] as i128) });
    Ok(recalibrate(&sizes, &freqs))
}
