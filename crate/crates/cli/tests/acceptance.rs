//! Acceptance gate: one PASS/FAIL line per criterion, then a nonzero exit if
//! any failed. Runs sequentially so the wall-clock limits are meaningful.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use localcal::binning::BinningScheme;
use localcal::calibrators::{fit, Calibrator, FitConfig, Method};
use localcal::dataset::{split, CalibrationDataset, SplitSpec};
use localcal::kernels::KernelConfig;
use localcal::lcn::{jsd_consistency_experiment, lcn_backward, median_gaps, ConsistencySpec, LcnConfig, LcnModel};
use localcal::metrics::{classwise_ecce, classwise_ece, evaluate, local_errors, LceVariant, MetricConfig};
use localcal::numerics::{fit_pca, pav_isotonic, Rng};
use localcal::synth::{generate, Generator, Mixture, SynthSpec};
use localcal::theory::{
    constructed_sample, gamma_sweep, hold_rate, run_theorem3, run_theorem5, toy_example, verify_theorem2,
    Theorem2Config, Theorem3Config, Theorem5Config,
};
use ndarray::Array2;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn onehot(labels: &[usize], c: usize) -> Array2<f64> {
    Array2::from_shape_fn((labels.len(), c), |(i, k)| if labels[i] == k { 1.0 } else { 0.0 })
}

fn c1_gradients() -> Verdict {
    let start = Instant::now();
    let mut rng = Rng::new(2024);
    let (m, c, nb) = (3, 3, 5);
    let x = Array2::from_shape_fn((nb, m), |_| rng.normal());
    let z = Array2::from_shape_fn((nb, c), |_| rng.normal());
    let y = onehot(&[0, 1, 2, 2, 0], c);
    let pca = fit_pca(x.view(), 2).unwrap();
    let cfg = LcnConfig {
        hidden: 4,
        dropout: 0.0,
        gamma: 1.0,
        ..LcnConfig::default()
    };
    let mut model = LcnModel::init(pca, c, &cfg, &mut rng);
    for v in model.params.wf.iter_mut().chain(model.params.wg.iter_mut()) {
        *v = 0.5 * rng.normal();
    }
    for v in model.params.b1.iter_mut().chain(model.params.bf.iter_mut()).chain(model.params.bg_vec.iter_mut()) {
        *v = 0.1 * rng.normal();
    }
    let loss = |mm: &LcnModel| {
        let cache = mm.forward_cached(x.view(), z.view(), false, None).unwrap();
        lcn_backward(mm, &cache, y.view()).unwrap().0.total
    };
    let cache = model.forward_cached(x.view(), z.view(), false, None).unwrap();
    let analytic = lcn_backward(&model, &cache, y.view()).unwrap().1.to_flat();
    let base = model.params.to_flat();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for k in 0..base.len() {
        let mut probe = model.clone();
        let mut v = base.clone();
        v[k] += h;
        probe.params.set_flat(&v);
        let up = loss(&probe);
        v[k] -= 2.0 * h;
        probe.params.set_flat(&v);
        let down = loss(&probe);
        let fd = (up - down) / (2.0 * h);
        let rel = (analytic[k] - fd).abs() / analytic[k].abs().max(fd.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst < 1e-4 && secs < 5.0,
        format!("{} parameters, max relative error {worst:.2e} (< 1e-4), {secs:.2} s (< 5 s)", base.len()),
    )
}

fn c2_toy() -> Verdict {
    let r = toy_example(&[350, 75, 75, 75, 75, 350]).unwrap();
    let exact = r.p_cal_bc() == Some((3, 5));
    let b = r.region("B").unwrap();
    let c = r.region("C").unwrap();
    let res_ok = b.residual_exact == Some((1, 20)) && c.residual_exact == Some((-1, 20));
    let float_ok = (b.p_cal.unwrap() - 0.6).abs() <= 1e-12;

    let out = Command::new(env!("CARGO_BIN_EXE_lcal"))
        .args(["verify", "toy", "--manifest"])
        .arg(std::env::temp_dir().join("lcal-acceptance-toy.manifest.json"))
        .output()
        .unwrap();
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let cli_p = json["regions"][1]["p_cal"].as_f64().unwrap_or(f64::NAN);
    let cli_ok = out.status.success() && (cli_p - 0.6).abs() <= 1e-12;
    verdict(
        exact && res_ok && float_ok && cli_ok,
        format!(
            "p_cal(B,C) = {:?} exact, cli {cli_p}, residuals B {:?} C {:?}",
            r.p_cal_bc(),
            b.residual_exact,
            c.residual_exact
        ),
    )
}

fn c3_theorem2() -> Verdict {
    let start = Instant::now();
    let mut rates = Vec::new();
    for eps in [0.0, 0.05, 0.1] {
        let reports = verify_theorem2(&Theorem2Config {
            epsilon: eps,
            ..Theorem2Config::default()
        })
        .unwrap();
        assert_eq!(reports.len(), 200);
        rates.push((eps, hold_rate(&reports)));
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        rates.iter().all(|&(_, r)| r >= 0.95) && secs < 120.0,
        format!("hold rates {rates:?} (>= 0.95), {secs:.1} s (< 120 s)"),
    )
}

fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let rank = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        for (k, &i) in idx.iter().enumerate() {
            r[i] = k as f64;
        }
        r
    };
    let (rx, ry) = (rank(x), rank(y));
    let n = x.len() as f64;
    let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b).powi(2)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

fn c4_theorem3() -> Verdict {
    let cfg = Theorem3Config::default();
    let reports = run_theorem3(&cfg).unwrap();
    let rate = hold_rate(&reports);
    let (d, p, _) = constructed_sample(&cfg.spec, cfg.epsilon).unwrap();
    let gammas = [0.5, 1.0, 2.0, 5.0, 10.0];
    let scheme = BinningScheme::equal_width(cfg.bins, cfg.min_bin_size);
    let sweep = gamma_sweep(p.view(), d.labels(), d.features(), &scheme, d.priors(), &gammas, cfg.exclude_self, cfg.delta)
        .unwrap();
    let bias: Vec<f64> = sweep.iter().map(|(_, t)| t.bias_term).collect();
    let var: Vec<f64> = sweep.iter().map(|(_, t)| t.variance_term).collect();
    let rb = spearman(&gammas, &bias);
    let rv = spearman(&gammas, &var);
    verdict(
        reports.len() == 20 && rate >= 0.95 && rb == 1.0 && rv == -1.0,
        format!(
            "hold rate {rate} over {} runs (>= 0.95); as gamma shrinks bias {bias:.4?} (spearman vs gamma {rb}), variance {var:.4?} (spearman {rv})",
            reports.len()
        ),
    )
}

fn c5_consistency() -> Verdict {
    let start = Instant::now();
    let spec = ConsistencySpec::default();
    let rows = jsd_consistency_experiment(&spec).unwrap();
    let med = median_gaps(&spec, &rows);
    let at = |n: usize| med.iter().find(|(m, _)| *m == n).map(|(_, g)| *g).unwrap();
    let (g500, g8000) = (at(500), at(8000));
    let secs = start.elapsed().as_secs_f64();
    verdict(
        g8000 < 0.5 * g500 && secs < 180.0,
        format!("median gaps {med:.5?}; ratio {:.3} (< 0.5), {secs:.1} s (< 180 s)", g8000 / g500),
    )
}

fn c6_theorem5() -> Verdict {
    let honest = run_theorem5(&Theorem5Config::default()).unwrap();
    let pairs: usize = honest.iter().map(|(_, r)| r.pairs.len()).sum();
    let held: usize = honest.iter().map(|(_, r)| r.pairs.len() - r.violations()).sum();
    let rate = held as f64 / pairs as f64;
    let biased = run_theorem5(&Theorem5Config {
        biased: true,
        ..Theorem5Config::default()
    })
    .unwrap();
    let flagged: Vec<usize> = biased.iter().map(|(_, r)| r.violations()).collect();
    verdict(
        pairs > 0 && rate >= 0.95 && flagged.iter().all(|&v| v >= 1),
        format!("{held}/{pairs} pairs hold ({rate:.4} >= 0.95); biased violations per seed {flagged:?} (all >= 1)"),
    )
}

// Naive metric oracles: direct loops over the definitions.

fn bin_of(p: f64, bins: usize) -> usize {
    ((p * bins as f64).floor().max(0.0) as usize).min(bins - 1)
}

fn naive_ece_ecce(probs: &Array2<f64>, labels: &[usize], bins: usize, priors: &[f64]) -> (f64, f64) {
    let (n, c) = probs.dim();
    let (mut ece, mut ecce) = (0.0, 0.0);
    for k in 0..c {
        let (mut e, mut cum, mut seen, mut ec) = (0.0, 0.0, 0usize, 0.0);
        for b in 0..bins {
            let members: Vec<usize> = (0..n).filter(|&i| bin_of(probs[[i, k]], bins) == b).collect();
            if members.is_empty() {
                continue;
            }
            let size = members.len() as f64;
            let freq = members.iter().filter(|&&i| labels[i] == k).count() as f64 / size;
            let conf = members.iter().map(|&i| probs[[i, k]]).sum::<f64>() / size;
            e += size / n as f64 * (freq - conf).abs();
            for &i in &members {
                cum += f64::from(u8::from(labels[i] == k)) - probs[[i, k]];
            }
            seen += members.len();
            ec += size / n as f64 * (cum / seen as f64).abs();
        }
        ece += priors[k] * e;
        ecce += priors[k] * ec;
    }
    (ece, ecce)
}

#[allow(clippy::too_many_arguments)]
fn naive_local(
    probs: &Array2<f64>,
    labels: &[usize],
    x: &Array2<f64>,
    bins: usize,
    min_bin: usize,
    gamma: f64,
    exclude_self: bool,
    priors: &[f64],
    vector: bool,
) -> (f64, f64) {
    let (n, c) = probs.dim();
    let kern = |i: usize, j: usize| {
        let d2: f64 = (0..x.ncols()).map(|t| (x[[i, t]] - x[[j, t]]).powi(2)).sum();
        (-d2 / (2.0 * gamma * gamma)).exp()
    };
    let resid = |j: usize, k: usize| probs[[j, k]] - f64::from(u8::from(labels[j] == k));
    let dev = |members: &[usize], i: usize, classes: &[usize]| -> f64 {
        let nb: Vec<usize> = members.iter().copied().filter(|&j| !(exclude_self && j == i)).collect();
        let total: f64 = nb.iter().map(|&j| kern(i, j)).sum();
        classes
            .iter()
            .map(|&k| (nb.iter().map(|&j| kern(i, j) * resid(j, k)).sum::<f64>() / total).abs())
            .sum()
    };
    let mut mlce: f64 = 0.0;
    if vector {
        let all: Vec<usize> = (0..c).collect();
        let (mut sum, mut count) = (0.0, 0usize);
        for b in 0..bins {
            let members: Vec<usize> = (0..n)
                .filter(|&i| bin_of((0..c).map(|k| probs[[i, k]]).fold(0.0, f64::max), bins) == b)
                .collect();
            if members.is_empty() || members.len() < min_bin {
                continue;
            }
            for &i in &members {
                let d = dev(&members, i, &all);
                sum += d;
                count += 1;
                mlce = mlce.max(d);
            }
        }
        return (sum / (c * count) as f64, mlce);
    }
    let mut per_class = Vec::new();
    for k in 0..c {
        let (mut sum, mut count) = (0.0, 0usize);
        for b in 0..bins {
            let members: Vec<usize> = (0..n).filter(|&i| bin_of(probs[[i, k]], bins) == b).collect();
            if members.is_empty() || members.len() < min_bin {
                continue;
            }
            for &i in &members {
                let d = dev(&members, i, &[k]);
                sum += d;
                count += 1;
                mlce = mlce.max(d);
            }
        }
        if count > 0 {
            per_class.push((k, sum / count as f64));
        }
    }
    let mass: f64 = per_class.iter().map(|&(k, _)| priors[k]).sum();
    let lce = per_class.iter().map(|&(k, v)| priors[k] / mass * v).sum();
    (lce, mlce)
}

fn c7_oracles() -> Verdict {
    let mut rng = Rng::new(77);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for t in 0..50 {
        let n = 8 + rng.below(53);
        let c = 2 + rng.below(3);
        let m = 1 + rng.below(3);
        let bins = [3, 5, 10, 15][rng.below(4)];
        let min_bin = 2 + rng.below(4);
        let gamma = [0.5, 1.0, 2.0, 10.0][rng.below(4)];
        let scale = 0.5 + 2.0 * rng.uniform();
        let x = Array2::from_shape_fn((n, m), |_| rng.normal());
        let logits = Array2::from_shape_fn((n, c), |_| scale * rng.normal());
        let labels: Vec<usize> = (0..n).map(|_| rng.below(c)).collect();
        let raw: Vec<f64> = (0..c).map(|_| 0.1 + rng.uniform()).collect();
        let priors: Vec<f64> = raw.iter().map(|v| v / raw.iter().sum::<f64>()).collect();
        let d = CalibrationDataset::new(x.clone(), logits, labels.clone(), None).unwrap();
        let probs = d.probs().into_inner();

        let global = BinningScheme::equal_width(bins, 0);
        let (ece, ecce) = naive_ece_ecce(&probs, &labels, bins, &priors);
        worst = worst.max((classwise_ece(probs.view(), &labels, &global, &priors).unwrap() - ece).abs());
        worst = worst.max((classwise_ecce(probs.view(), &labels, &global, &priors).unwrap() - ecce).abs());

        let local = BinningScheme::equal_width(bins, min_bin);
        for exclude_self in [true, false] {
            for vector in [false, true] {
                let kernel = KernelConfig::new(gamma, exclude_self).unwrap();
                let variant = if vector { LceVariant::VectorL1 } else { LceVariant::ClasswiseScalar };
                let got = local_errors(probs.view(), &labels, x.view(), &local, &kernel, &priors, variant);
                let (lce, mlce) = naive_local(&probs, &labels, &x, bins, min_bin, gamma, exclude_self, &priors, vector);
                match got {
                    Ok(g) => {
                        worst = worst.max((g.lce - lce).abs()).max((g.mlce - mlce).abs());
                        cases += 1;
                    }
                    // no bin reaches the minimum size: the oracle sees no anchors either
                    Err(_) => assert!(lce.is_nan() || lce == 0.0, "case {t}: error but oracle gave {lce}"),
                }
            }
        }
    }
    verdict(worst <= 1e-10, format!("50 datasets, {cases} local-metric cases, max abs difference {worst:.2e} (<= 1e-10)"))
}

/// Least-squares isotonic fit by enumerating every split into contiguous
/// blocks and keeping the best nondecreasing block-mean sequence.
fn brute_isotonic(y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mut best = (f64::INFINITY, Vec::new());
    for mask in 0u32..(1 << (n - 1)) {
        let mut fit = Vec::with_capacity(n);
        let mut start = 0;
        let mut ok = true;
        let mut prev = f64::NEG_INFINITY;
        for i in 0..n {
            if i == n - 1 || mask & (1 << i) != 0 {
                let mean = y[start..=i].iter().sum::<f64>() / (i + 1 - start) as f64;
                if mean < prev {
                    ok = false;
                    break;
                }
                prev = mean;
                fit.extend(std::iter::repeat_n(mean, i + 1 - start));
                start = i + 1;
            }
        }
        if !ok {
            continue;
        }
        let sse: f64 = fit.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
        if sse < best.0 - 1e-12 {
            best = (sse, fit);
        }
    }
    best.1
}

fn c8_calibrators() -> Verdict {
    let mut notes = Vec::new();
    let mut pass = true;

    let (d, _) = generate(&SynthSpec::benchmark(4000, 11)).unwrap();
    let parts = split(&d, &SplitSpec { fractions: vec![("cal".into(), 0.5), ("test".into(), 0.5)], seed: 11 }).unwrap();
    let (cal, test) = (&parts[0].1, &parts[1].1);
    let lcn = LcnConfig { epochs: 3, ..LcnConfig::default() };
    let mut simplex: f64 = 0.0;
    for method in Method::ALL {
        let f = fit(method, cal, &FitConfig::default(), &lcn).unwrap();
        let p = f.calibrator.apply(test).unwrap();
        for row in p.view().rows() {
            simplex = simplex.max((row.sum() - 1.0).abs());
            simplex = simplex.max(-row.iter().copied().fold(0.0, f64::min));
        }
    }
    pass &= simplex <= 1e-9;
    notes.push(format!("simplex error {simplex:.1e}"));

    let mut rng = Rng::new(5);
    let n = 10_000;
    let logits = Array2::from_shape_fn((n, 5), |_| 3.0 * rng.normal());
    let labels: Vec<usize> = (0..n).map(|_| rng.below(5)).collect();
    let rows = CalibrationDataset::new(Array2::zeros((n, 1)), logits.clone(), labels, None).unwrap();
    let mut flips = 0;
    for t in [0.05, 0.4, 2.7, 20.0] {
        let p = Calibrator::Temperature { t }.apply(&rows).unwrap();
        for (z, q) in logits.rows().into_iter().zip(p.view().rows()) {
            let am = |v: ndarray::ArrayView1<f64>| {
                v.iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (i, &x)| if x > b.1 { (i, x) } else { b }).0
            };
            flips += usize::from(am(z) != am(q));
        }
    }
    pass &= flips == 0;
    notes.push(format!("argmax changes {flips}"));

    let spec = SynthSpec {
        generator: Generator::TemperatureCorrupted { mixture: Mixture::benchmark(), temperature: 3.0, regional: false },
        n: 10_000,
        seed: 3,
    };
    let (hot, _) = generate(&spec).unwrap();
    let t = match fit(Method::Temperature, &hot, &FitConfig::default(), &lcn).unwrap().calibrator {
        Calibrator::Temperature { t } => t,
        _ => unreachable!(),
    };
    pass &= (t - 3.0).abs() <= 0.2;
    notes.push(format!("recovered T {t:.4}"));

    let grid = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
    let mut checked = 0;
    let mut pav_err: f64 = 0.0;
    for len in 1..=8u32 {
        for code in 0..4usize.pow(len) {
            let y: Vec<f64> = (0..len).map(|i| grid[(code / 4usize.pow(i)) % 4]).collect();
            let got = pav_isotonic(&y, &vec![1.0; y.len()]).unwrap();
            let want = brute_isotonic(&y);
            pav_err = got.iter().zip(&want).fold(pav_err, |a, (g, w)| a.max((g - w).abs()));
            checked += 1;
        }
    }
    pass &= pav_err <= 1e-12;
    notes.push(format!("pav vs brute force on {checked} sequences, max error {pav_err:.1e}"));
    verdict(pass, notes.join("; "))
}

fn c9_efficacy() -> Verdict {
    let start = Instant::now();
    let cfg = MetricConfig::default();
    let mut wins = 0;
    let mut ece_ok = 0;
    let mut lines = Vec::new();
    for seed in 0..5u64 {
        let (d, _) = generate(&SynthSpec::benchmark(20_000, seed)).unwrap();
        let parts = split(&d, &SplitSpec { fractions: vec![("cal".into(), 0.5), ("test".into(), 0.5)], seed }).unwrap();
        let (cal, test) = (&parts[0].1, &parts[1].1);
        let eval = |ds: &CalibrationDataset| {
            evaluate(ds.probs().view(), ds.labels(), ds.features(), cal.priors(), &cfg).unwrap()
        };
        let lcn_cfg = LcnConfig { epochs: 60, lr: 3e-3, seed, ..LcnConfig::default() };
        let fit_cfg = FitConfig { seed, ..FitConfig::default() };
        let raw = eval(test);
        let ts = eval(&fit(Method::Temperature, cal, &fit_cfg, &lcn_cfg).unwrap().calibrator.apply_to_dataset(test).unwrap());
        let lcn = eval(&fit(Method::Lcn, cal, &fit_cfg, &lcn_cfg).unwrap().calibrator.apply_to_dataset(test).unwrap());
        let win = lcn.lce < ts.lce && lcn.lce < raw.lce && lcn.mlce < ts.mlce && lcn.mlce < raw.mlce;
        let best = ts.ece.min(raw.ece);
        wins += usize::from(win);
        ece_ok += usize::from(lcn.ece <= 1.5 * best);
        lines.push(format!(
            "seed {seed}: lce {:.4}/{:.4}/{:.4} mlce {:.4}/{:.4}/{:.4} ece {:.4}/{:.4}/{:.4}",
            lcn.lce, ts.lce, raw.lce, lcn.mlce, ts.mlce, raw.mlce, lcn.ece, ts.ece, raw.ece
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    for l in &lines {
        println!("    {l}  (lcn/ts/raw)");
    }
    verdict(
        wins >= 4 && ece_ok >= 4 && secs < 600.0,
        format!("lcn wins lce and mlce in {wins}/5 seeds (>= 4), ece within 1.5x of best baseline in {ece_ok}/5, {secs:.0} s (< 600 s)"),
    )
}

fn lcal(dir: &Path, threads: &str, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_lcal"))
        .current_dir(dir)
        .env_remove("LCAL_THREADS")
        .args(["--threads", threads])
        .args(args)
        .output()
        .unwrap()
}

fn c10_determinism() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let steps: Vec<(&str, Vec<&str>)> = vec![
        ("synth", vec!["synth", "--out", "d.lcds", "--n", "3000", "--seed", "7"]),
        ("split", vec!["split", "--data", "d.lcds", "--out-dir", "parts", "--seed", "7"]),
        ("fit-ts", vec!["fit", "--method", "ts", "--cal", "parts/cal.lcds", "--out", "ts.json"]),
        ("fit-platt", vec!["fit", "--method", "platt", "--cal", "parts/cal.lcds", "--out", "platt.json"]),
        ("fit-isotonic", vec!["fit", "--method", "isotonic", "--cal", "parts/cal.lcds", "--out", "iso.json"]),
        ("fit-dirichlet", vec!["fit", "--method", "dirichlet", "--cal", "parts/cal.lcds", "--out", "dir.json"]),
        ("fit-lcn", vec!["fit", "--method", "lcn", "--cal", "parts/cal.lcds", "--out", "lcn.json", "--epochs", "4", "--trace", "trace.json"]),
        ("apply-ts", vec!["apply", "--model", "ts.json", "--data", "parts/test.lcds", "--out", "ts.lcds"]),
        ("apply-lcn", vec!["apply", "--model", "lcn.json", "--data", "parts/test.lcds", "--out", "lcn.lcds"]),
        ("eval", vec!["eval", "--data", "lcn.lcds", "--priors-from", "parts/cal.lcds", "--per-class", "--report", "eval.json"]),
        ("eval-stdout", vec!["eval", "--data", "ts.lcds", "--variant", "vector", "--manifest", "eval-stdout.manifest.json"]),
        ("thm2", vec!["verify", "thm2", "--trials", "8", "--n", "4000", "--report", "thm2.jsonl"]),
        ("thm3", vec!["verify", "thm3", "--seeds", "4", "--sweep", "0.5,1,2", "--report", "thm3.jsonl"]),
        ("thm3-data", vec!["verify", "thm3", "--data", "parts/test.lcds", "--gamma", "10", "--report", "thm3d.jsonl"]),
        ("thm5", vec!["verify", "thm5", "--seeds", "3", "--biased", "--report", "thm5.jsonl"]),
        ("thm5-data", vec!["verify", "thm5", "--data", "parts/test.lcds", "--report", "thm5d.jsonl"]),
        ("jsd", vec!["verify", "jsd", "--sizes", "200,400", "--seeds", "2", "--report", "jsd.jsonl"]),
        ("toy", vec!["verify", "toy", "--report", "toy.json"]),
    ];
    let manifest_of = |args: &[&str]| -> String {
        if let Some(k) = args.iter().position(|a| *a == "--manifest") {
            return args[k + 1].to_string();
        }
        let flag = ["--out", "--report"].iter().find_map(|f| args.iter().position(|a| a == f));
        match (args[0], flag) {
            ("split", _) => "parts/cal.lcds.manifest.json".into(),
            (_, Some(k)) => format!("{}.manifest.json", args[k + 1]),
            _ => unreachable!(),
        }
    };
    let mut failures = Vec::new();
    for (name, args) in &steps {
        let out = lcal(dir, "1", args);
        if !out.status.success() {
            failures.push(format!("{name}: exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)));
            continue;
        }
        let manifest = manifest_of(args);
        for threads in ["1", "8"] {
            let r = lcal(dir, threads, &["replay", "--manifest", &manifest]);
            if !r.status.success() {
                failures.push(format!("{name} at {threads} threads: {}", String::from_utf8_lossy(&r.stdout).trim()));
            }
        }
    }
    verdict(
        failures.is_empty(),
        if failures.is_empty() {
            format!("{} pipelines replayed byte-identically at 1 and 8 threads", steps.len())
        } else {
            failures.join(" | ")
        },
    )
}

type Criterion = (&'static str, fn() -> Verdict);

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("gradient correctness", c1_gradients),
        ("toy example exactness", c2_toy),
        ("theorem 2 bound", c3_theorem2),
        ("theorem 3 bound and trade-off", c4_theorem3),
        ("jsd consistency trend", c5_consistency),
        ("theorem 5 proximity bound", c6_theorem5),
        ("metric oracle equivalence", c7_oracles),
        ("calibrator contracts", c8_calibrators),
        ("method efficacy", c9_efficacy),
        ("cli determinism", c10_determinism),
    ];
    let only: Option<usize> = std::env::var("LCAL_ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (k, (name, check)) in criteria.into_iter().enumerate() {
        if only.is_some_and(|o| o != k + 1) {
            continue;
        }
        let v = check();
        failed += usize::from(!v.pass);
        println!("{} {:>2} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, k + 1, v.detail);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
