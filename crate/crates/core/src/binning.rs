//! Class-wise confidence binning and the generic bin-based metric.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinMode {
    ClasswiseEqualWidth,
    ClasswiseEqualFrequency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinningScheme {
    pub mode: BinMode,
    pub bins: usize,
    /// Bins with fewer members are dropped; 0 keeps every nonempty bin.
    pub min_bin_size: usize,
}

impl BinningScheme {
    pub fn equal_width(bins: usize, min_bin_size: usize) -> Self {
        Self {
            mode: BinMode::ClasswiseEqualWidth,
            bins,
            min_bin_size,
        }
    }
}

/// Equal-width bin of a confidence: `min(floor(p * m_B), m_B - 1)`.
pub fn equal_width_index(p: f64, bins: usize) -> usize {
    let b = (p * bins as f64).floor();
    if b <= 0.0 {
        0
    } else {
        (b as usize).min(bins - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bin {
    pub index: usize,
    pub members: Vec<usize>,
    pub freq: f64,
    pub conf: f64,
    /// Share of the class's retained members that fall in this bin.
    pub weight: f64,
}

impl Bin {
    pub fn size(&self) -> usize {
        self.members.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassBins {
    pub class: usize,
    /// Retained bins in increasing confidence order.
    pub bins: Vec<Bin>,
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinStats {
    pub scheme: BinningScheme,
    pub per_class: Vec<ClassBins>,
    /// Class weights renormalized over classes that kept at least one bin.
    pub class_weights: Vec<f64>,
}

impl BinStats {
    pub fn classes(&self) -> usize {
        self.per_class.len()
    }
}

/// Per-class bins of `probs[:, c]` with frequency and confidence aggregates.
pub fn assign_bins(
    probs: ArrayView2<f64>,
    labels: &[usize],
    scheme: &BinningScheme,
    priors: &[f64],
) -> Result<BinStats> {
    let (n, c) = probs.dim();
    if scheme.bins == 0 {
        return Err(Error::InvalidArgument("bin count must be at least 1".into()));
    }
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            left: n,
            right: labels.len(),
        });
    }
    if priors.len() != c {
        return Err(Error::ClassCountMismatch {
            expected: c,
            found: priors.len(),
        });
    }
    if n == 0 {
        return Err(Error::AllBinsEmpty);
    }
    let mut per_class = Vec::with_capacity(c);
    for class in 0..c {
        let col = probs.column(class);
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); scheme.bins];
        match scheme.mode {
            BinMode::ClasswiseEqualWidth => {
                for i in 0..n {
                    groups[equal_width_index(col[i], scheme.bins)].push(i);
                }
            }
            BinMode::ClasswiseEqualFrequency => {
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
                for (rank, i) in order.into_iter().enumerate() {
                    groups[rank * scheme.bins / n].push(i);
                }
                for g in &mut groups {
                    g.sort_unstable();
                }
            }
        }
        let keep = |g: &Vec<usize>| !g.is_empty() && g.len() >= scheme.min_bin_size;
        let retained: usize = groups.iter().filter(|g| keep(g)).map(Vec::len).sum();
        let dropped = groups.iter().filter(|g| !g.is_empty() && !keep(g)).count();
        let bins = groups
            .into_iter()
            .enumerate()
            .filter(|(_, g)| keep(g))
            .map(|(index, members)| {
                let k = members.len() as f64;
                let freq = members.iter().filter(|&&i| labels[i] == class).count() as f64 / k;
                let conf = members.iter().map(|&i| col[i]).sum::<f64>() / k;
                Bin {
                    index,
                    weight: members.len() as f64 / retained as f64,
                    members,
                    freq,
                    conf,
                }
            })
            .collect();
        per_class.push(ClassBins { class, bins, dropped });
    }
    let live: f64 = per_class
        .iter()
        .zip(priors)
        .filter(|(cb, _)| !cb.bins.is_empty())
        .map(|(_, p)| p)
        .sum();
    if per_class.iter().all(|cb| cb.bins.is_empty()) {
        return Err(Error::AllBinsEmpty);
    }
    let class_weights = per_class
        .iter()
        .zip(priors)
        .map(|(cb, &p)| if cb.bins.is_empty() || live <= 0.0 { 0.0 } else { p / live })
        .collect();
    Ok(BinStats {
        scheme: *scheme,
        per_class,
        class_weights,
    })
}

/// Scalar discrepancy between a bin's frequency and confidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    AbsDiff,
}

impl Comparator {
    pub fn eval(&self, freq: f64, conf: f64) -> f64 {
        match self {
            Comparator::AbsDiff => (freq - conf).abs(),
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match self {
            Comparator::AbsDiff => 1.0,
        }
    }
}

/// `sum_c pi_c sum_b w_{b,c} phi(freq_{b,c}, conf_{b,c})`.
pub fn generic_metric(stats: &BinStats, cmp: Comparator) -> f64 {
    let mut total = 0.0;
    for (cb, &pi) in stats.per_class.iter().zip(&stats.class_weights) {
        let mut inner = 0.0;
        for b in &cb.bins {
            inner += b.weight * cmp.eval(b.freq, b.conf);
        }
        total += pi * inner;
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Bound {
    pub epsilon_term: f64,
    pub hoeffding_term: f64,
    pub total: f64,
}

/// `L [eps + sum_b w_b sqrt(ln(2 C m_B / delta) / (2 |Psi_b|))]` from
/// `(w_b, |Psi_b|)` pairs. An infinite `|Psi_b|` contributes nothing.
pub fn theorem2_bound_terms(
    epsilon: f64,
    delta: f64,
    lipschitz: f64,
    classes: usize,
    bins: usize,
    terms: &[(f64, f64)],
) -> Result<Theorem2Bound> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidDelta(delta));
    }
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be nonnegative, got {epsilon}")));
    }
    let log_term = (2.0 * classes as f64 * bins as f64 / delta).ln();
    let mut hoeffding = 0.0;
    for &(w, psi) in terms {
        if psi.is_infinite() {
            continue;
        }
        hoeffding += w * (log_term / (2.0 * psi)).sqrt();
    }
    Ok(Theorem2Bound {
        epsilon_term: lipschitz * epsilon,
        hoeffding_term: lipschitz * hoeffding,
        total: lipschitz * (epsilon + hoeffding),
    })
}

/// Per bin index: `(w_b, |Psi_b|)` with `w_b = sum_c pi_c w_{b,c}` and
/// `|Psi_b| = min_c |B_{b,c}|` over classes whose bin `b` was retained.
pub fn theorem2_bin_terms(stats: &BinStats) -> Vec<(usize, f64, f64)> {
    let mut w = vec![0.0; stats.scheme.bins];
    let mut psi = vec![usize::MAX; stats.scheme.bins];
    for (cb, &pi) in stats.per_class.iter().zip(&stats.class_weights) {
        for b in &cb.bins {
            w[b.index] += pi * b.weight;
            psi[b.index] = psi[b.index].min(b.size());
        }
    }
    (0..stats.scheme.bins)
        .filter(|&b| psi[b] != usize::MAX)
        .map(|b| (b, w[b], psi[b] as f64))
        .collect()
}

pub fn theorem2_bound(stats: &BinStats, epsilon: f64, delta: f64, lipschitz: f64) -> Result<Theorem2Bound> {
    let terms: Vec<(f64, f64)> = theorem2_bin_terms(stats).into_iter().map(|(_, w, p)| (w, p)).collect();
    theorem2_bound_terms(epsilon, delta, lipschitz, stats.classes(), stats.scheme.bins, &terms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use ndarray::{array, Array2};
    use num_rational::Ratio;
    use num_traits::{ToPrimitive, Zero};

    #[test]
    fn bin_index_boundaries() {
        assert_eq!(equal_width_index(1.0, 15), 14);
        assert_eq!(equal_width_index(0.0, 15), 0);
        assert_eq!(equal_width_index(0.5, 10), 5);
        assert_eq!(equal_width_index(0.4999, 10), 4);
    }

    #[test]
    fn single_occupied_bin() {
        let probs = Array2::from_elem((6, 2), 0.5);
        let s = assign_bins(probs.view(), &[0, 1, 0, 1, 0, 1], &BinningScheme::equal_width(15, 0), &[0.5, 0.5]).unwrap();
        for cb in &s.per_class {
            assert_eq!(cb.bins.len(), 1);
            assert_eq!(cb.bins[0].weight, 1.0);
        }
        assert_eq!(generic_metric(&s, Comparator::AbsDiff), 0.0);
    }

    #[test]
    fn histogram_counts() {
        let mut rng = Rng::new(4);
        let p: Vec<f64> = (0..100).map(|_| rng.uniform()).collect();
        let probs = Array2::from_shape_fn((100, 2), |(i, j)| if j == 0 { p[i] } else { 1.0 - p[i] });
        let s = assign_bins(probs.view(), &vec![0; 100], &BinningScheme::equal_width(10, 0), &[1.0, 0.0]).unwrap();
        let mut hist = [0usize; 10];
        for &v in &p {
            let mut b = 0;
            while b < 9 && v >= (b + 1) as f64 / 10.0 {
                b += 1;
            }
            hist[b] += 1;
        }
        for b in &s.per_class[0].bins {
            assert_eq!(b.size(), hist[b.index]);
        }
        assert_eq!(s.per_class[0].bins.iter().map(Bin::size).sum::<usize>(), 100);
    }

    #[test]
    fn single_class_single_bin_gap() {
        // ten rows, class-0 confidence 0.9 and 7 positives
        let probs = Array2::from_shape_fn((10, 2), |(_, j)| if j == 0 { 0.9 } else { 0.1 });
        let labels: Vec<usize> = (0..10).map(|i| usize::from(i >= 7)).collect();
        let s = assign_bins(probs.view(), &labels, &BinningScheme::equal_width(15, 0), &[1.0, 0.0]).unwrap();
        assert!((generic_metric(&s, Comparator::AbsDiff) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn matches_exact_double_sum() {
        // 3 classes, 4 bins; dyadic probabilities make the float path exact
        // enough to compare with rationals at 1e-15.
        let mut rng = Rng::new(8);
        let n = 40;
        let mut probs = Array2::zeros((n, 3));
        for i in 0..n {
            let a = rng.below(9) as f64 / 16.0;
            let b = rng.below(9) as f64 / 16.0 * (1.0 - a);
            probs[[i, 0]] = a;
            probs[[i, 1]] = b;
            probs[[i, 2]] = 1.0 - a - b;
        }
        let labels: Vec<usize> = (0..n).map(|_| rng.below(3)).collect();
        let priors = [0.5, 0.25, 0.25];
        let s = assign_bins(probs.view(), &labels, &BinningScheme::equal_width(4, 0), &priors).unwrap();
        let got = generic_metric(&s, Comparator::AbsDiff);

        let r = |v: f64| {
            let scaled = v * 1048576.0;
            assert_eq!(scaled.fract(), 0.0);
            Ratio::<i128>::new(scaled as i128, 1 << 20)
        };
        let mut want = Ratio::<i128>::zero();
        for c in 0..3 {
            let mut inner = Ratio::<i128>::zero();
            for b in 0..4 {
                let mem: Vec<usize> = (0..n)
                    .filter(|&i| ((probs[[i, c]] * 4.0).floor() as usize).min(3) == b)
                    .collect();
                if mem.is_empty() {
                    continue;
                }
                let k = Ratio::from_integer(mem.len() as i128);
                let pos = Ratio::from_integer(mem.iter().filter(|&&i| labels[i] == c).count() as i128);
                let conf = mem.iter().map(|&i| r(probs[[i, c]])).fold(Ratio::zero(), |a, b| a + b);
                let gap = (pos - conf) / k;
                let gap = if gap < Ratio::zero() { -gap } else { gap };
                inner += k / Ratio::from_integer(n as i128) * gap;
            }
            want += r(priors[c]) * inner;
        }
        assert!((got - want.to_f64().unwrap()).abs() < 1e-15);
    }

    #[test]
    fn sparse_bins_dropped_and_renormalized() {
        let probs = array![[0.05, 0.95], [0.06, 0.94], [0.07, 0.93], [0.95, 0.05]];
        let s = assign_bins(probs.view(), &[1, 1, 1, 0], &BinningScheme::equal_width(10, 2), &[0.5, 0.5]).unwrap();
        assert_eq!(s.per_class[0].bins.len(), 1);
        assert_eq!(s.per_class[0].dropped, 1);
        assert_eq!(s.per_class[0].bins[0].weight, 1.0);
    }

    #[test]
    fn empty_classes_reweighted_and_all_empty_rejected() {
        let probs = array![[0.55, 0.45], [0.95, 0.05]];
        let s = assign_bins(probs.view(), &[0, 0], &BinningScheme::equal_width(10, 2), &[0.5, 0.5]);
        assert!(matches!(s, Err(Error::AllBinsEmpty)));
    }

    #[test]
    fn theorem2_closed_form() {
        let b = theorem2_bound_terms(0.0, 0.05, 1.0, 3, 15, &[(1.0, 20.0)]).unwrap();
        assert!((b.total - (1800f64.ln() / 40.0).sqrt()).abs() < 1e-15);
        let b = theorem2_bound_terms(0.3, 0.05, 1.0, 3, 15, &[(1.0, f64::INFINITY)]).unwrap();
        assert_eq!(b.total, 0.3);
        let mut prev = f64::INFINITY;
        for size in [1e2, 1e4, 1e6] {
            let v = theorem2_bound_terms(0.0, 0.05, 1.0, 2, 1, &[(1.0, size)]).unwrap().total;
            assert!(v < prev);
            prev = v;
        }
        assert!(matches!(theorem2_bound_terms(0.0, 0.0, 1.0, 2, 1, &[]), Err(Error::InvalidDelta(_))));
        assert!(theorem2_bound_terms(0.0, 1.5, 1.0, 2, 1, &[]).is_err());
    }

    #[test]
    fn psi_is_min_over_classes() {
        let probs = array![[0.05, 0.95], [0.06, 0.94], [0.96, 0.04]];
        let s = assign_bins(probs.view(), &[1, 1, 0], &BinningScheme::equal_width(2, 0), &[0.5, 0.5]).unwrap();
        let t = theorem2_bin_terms(&s);
        // bin 0: class 0 has 2 members, class 1 has 1; bin 1: class 0 has 1, class 1 has 2
        assert_eq!(t, vec![(0, 0.5 * 2.0 / 3.0 + 0.5 / 3.0, 1.0), (1, 0.5 / 3.0 + 0.5 * 2.0 / 3.0, 1.0)]);
        let w: f64 = t.iter().map(|x| x.1).sum();
        assert!((w - 1.0).abs() < 1e-12);
    }
}
