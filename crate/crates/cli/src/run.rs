use std::fs;
use std::path::{Path, PathBuf};

use localcal::binning::BinningScheme;
use localcal::calibrators::{fit, FitConfig, Fitted, Method};
use localcal::dataset::{label_frequencies, load_dataset, save_dataset, split, CalibrationDataset, Format, ProbabilityMatrix, SplitSpec};
use localcal::kernels::KernelConfig;
use localcal::lcn::{jsd_consistency_experiment, median_gaps, ConsistencySpec, LcnConfig};
use localcal::metrics::{evaluate, round_sig, LceVariant, MetricConfig, PriorSource};
use localcal::synth::{generate, SynthSpec};
use localcal::theory::{
    constructed_sample, estimate_epsilon, gamma_sweep, hold_rate, run_theorem3, run_theorem5, toy_example,
    verify_theorem2, verify_theorem3, verify_theorem5, ProximityReport, Theorem2Config, Theorem3Config,
    Theorem5Config,
};
use log::{info, warn};
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::*;
use crate::error::{io_err, CliError, CliResult};

/// Files a command read and wrote, plus any report meant for standard output.
#[derive(Debug, Default)]
pub struct Outcome {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub stdout: Option<String>,
}

impl Outcome {
    fn input(&mut self, p: &Path) {
        self.inputs.push(p.to_path_buf());
    }

    /// Writes `text` to `path`, or keeps it for standard output.
    fn emit(&mut self, text: String, path: Option<&Path>) -> CliResult<()> {
        match path {
            Some(p) => {
                write_file(p, text.as_bytes())?;
                self.outputs.push(p.to_path_buf());
            }
            None => self.stdout = Some(text),
        }
        Ok(())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn load(path: &Path, out: &mut Outcome) -> CliResult<CalibrationDataset> {
    out.input(path);
    Ok(load_dataset(path, Format::from_path(path))?)
}

fn save(d: &CalibrationDataset, path: &Path, out: &mut Outcome) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    save_dataset(d, path, Format::from_path(path))?;
    out.outputs.push(path.to_path_buf());
    Ok(())
}

fn read_spec(path: &Path, out: &mut Outcome) -> CliResult<SynthSpec> {
    out.input(path);
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Ok(SynthSpec::from_toml(&text)?)
}

/// Every float rounded to 12 significant digits.
pub fn rounded(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().unwrap_or(f64::NAN);
            serde_json::Number::from_f64(round_sig(x, 12)).map_or(Value::Null, Value::Number)
        }
        Value::Array(a) => Value::Array(a.into_iter().map(rounded).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, rounded(v))).collect()),
        other => other,
    }
}

fn to_value<T: Serialize>(v: &T) -> CliResult<Value> {
    Ok(rounded(serde_json::to_value(v)?))
}

fn pretty(v: &Value) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

fn jsonl(lines: &[Value]) -> CliResult<String> {
    let mut s = String::new();
    for l in lines {
        s.push_str(&serde_json::to_string(l)?);
        s.push('\n');
    }
    Ok(s)
}

pub fn run(cmd: &Command) -> CliResult<Outcome> {
    let mut out = Outcome::default();
    match cmd {
        Command::Synth(a) => synth(a, &mut out)?,
        Command::Split(a) => split_cmd(a, &mut out)?,
        Command::Fit(a) => fit_cmd(a, &mut out)?,
        Command::Apply(a) => apply(a, &mut out)?,
        Command::Eval(a) => eval(a, &mut out)?,
        Command::Verify(v) => match &v.which {
            VerifyCommand::Thm2(a) => thm2(a, &mut out)?,
            VerifyCommand::Thm3(a) => thm3(a, &mut out)?,
            VerifyCommand::Thm5(a) => thm5(a, &mut out)?,
            VerifyCommand::Jsd(a) => jsd(a, &mut out)?,
            VerifyCommand::Toy(a) => toy(a, &mut out)?,
        },
        Command::Replay(_) => unreachable!("replay is handled by the caller"),
    }
    Ok(out)
}

fn synth(a: &SynthArgs, out: &mut Outcome) -> CliResult<()> {
    let mut spec = match &a.spec {
        Some(p) => read_spec(p, out)?,
        None => SynthSpec::benchmark(20_000, 0),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(n) = a.n {
        spec.n = n;
    }
    let (d, _) = generate(&spec)?;
    info!("sampled {} rows, {} classes, {} features", d.n(), d.classes(), d.m());
    save(&d, &a.out, out)
}

fn parse_fractions(s: &str) -> CliResult<Vec<(String, f64)>> {
    s.split(',')
        .map(|part| {
            let (name, v) = part
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("expected name=fraction, got {part:?}")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("bad fraction {v:?} for part {name:?}")))?;
            Ok((name.trim().to_string(), v))
        })
        .collect()
}

fn split_cmd(a: &SplitArgs, out: &mut Outcome) -> CliResult<()> {
    let d = load(&a.data, out)?;
    let spec = SplitSpec {
        fractions: parse_fractions(&a.fractions)?,
        seed: a.seed,
    };
    let ext = a.data.extension().and_then(|e| e.to_str()).unwrap_or("lcds");
    for (name, part) in split(&d, &spec)? {
        info!("part {name}: {} rows", part.n());
        save(&part, &a.out_dir.join(format!("{name}.{ext}")), out)?;
    }
    Ok(())
}

fn method(m: MethodArg) -> Method {
    match m {
        MethodArg::Ts => Method::Temperature,
        MethodArg::Platt => Method::Platt,
        MethodArg::Isotonic => Method::Isotonic,
        MethodArg::Dirichlet => Method::Dirichlet,
        MethodArg::Lcn => Method::Lcn,
    }
}

pub fn lcn_config(a: &FitArgs) -> LcnConfig {
    LcnConfig {
        hidden: a.hidden,
        dropout: a.dropout,
        lambda: a.lambda,
        gamma: a.gamma,
        pca_dim: a.pca_dim,
        lr: a.lr.unwrap_or(1e-3),
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: a.seed,
        val_frac: a.val_frac,
        ..LcnConfig::default()
    }
}

fn fit_cmd(a: &FitArgs, out: &mut Outcome) -> CliResult<()> {
    let cal = load(&a.cal, out)?;
    let cfg = FitConfig {
        val_frac: a.val_frac,
        seed: a.seed,
        lr: a.lr.unwrap_or(1e-2),
        ..FitConfig::default()
    };
    let fitted = fit(method(a.method), &cal, &cfg, &lcn_config(a))?;
    info!("fitted {} on {} rows", fitted.calibrator.method(), cal.n());
    write_file(&a.out, fitted.to_json()?.as_bytes())?;
    out.outputs.push(a.out.clone());
    if let Some(p) = &a.trace {
        match &fitted.lcn_trace {
            Some(t) => {
                write_file(p, pretty(&to_value(t)?)?.as_bytes())?;
                out.outputs.push(p.clone());
            }
            None => warn!("--trace is only written for lcn"),
        }
    }
    Ok(())
}

fn apply(a: &ApplyArgs, out: &mut Outcome) -> CliResult<()> {
    out.input(&a.model);
    let text = fs::read_to_string(&a.model).map_err(|e| io_err(&a.model, e))?;
    let fitted = Fitted::from_json(&text)?;
    let d = load(&a.data, out)?;
    let calibrated = fitted.calibrator.apply_to_dataset(&d)?;
    save(&calibrated, &a.out, out)
}

fn eval(a: &EvalArgs, out: &mut Outcome) -> CliResult<()> {
    let d = load(&a.data, out)?;
    let priors = match (a.priors, &a.priors_from) {
        (PriorsArg::Eval, _) => label_frequencies(d.labels(), d.classes()),
        (PriorsArg::Train, Some(p)) => {
            let other = load(p, out)?;
            if other.classes() != d.classes() {
                return Err(localcal::Error::ClassCountMismatch {
                    expected: other.classes(),
                    found: d.classes(),
                }
                .into());
            }
            other.priors().to_vec()
        }
        (PriorsArg::Train, None) => {
            if !d.has_explicit_priors() {
                warn!("no training priors recorded; using label frequencies of the evaluated data");
            }
            d.priors().to_vec()
        }
    };
    let cfg = MetricConfig {
        bins: a.bins,
        min_bin_size: a.min_bin,
        kernel: KernelConfig::new(a.gamma, !a.include_self)?,
        variant: match a.variant {
            VariantArg::Classwise => LceVariant::ClasswiseScalar,
            VariantArg::Vector => LceVariant::VectorL1,
        },
        prior_source: match a.priors {
            PriorsArg::Train => PriorSource::Train,
            PriorsArg::Eval => PriorSource::Eval,
        },
    };
    let probs = d.probs();
    let report = evaluate(probs.view(), d.labels(), d.features(), &priors, &cfg)?;
    out.emit(pretty(&report.to_json(a.per_class))?, a.report.as_deref())
}

fn thm2(a: &Thm2Args, out: &mut Outcome) -> CliResult<()> {
    let spec = match &a.spec {
        Some(p) => {
            let mut s = read_spec(p, out)?;
            s.n = a.n;
            s
        }
        None => SynthSpec::benchmark(a.n, a.seed),
    };
    let cfg = Theorem2Config {
        trials: a.trials,
        spec,
        bins: a.bins,
        epsilon: a.epsilon,
        delta: a.delta,
        seed: a.seed,
    };
    let reports = verify_theorem2(&cfg)?;
    let mut lines = reports.iter().map(to_value).collect::<CliResult<Vec<_>>>()?;
    lines.push(rounded(json!({
        "summary": { "trials": reports.len(), "epsilon": a.epsilon, "delta": a.delta, "hold_rate": hold_rate(&reports) }
    })));
    info!("bound held in {:.1}% of trials", 100.0 * hold_rate(&reports));
    out.emit(jsonl(&lines)?, a.report.as_deref())
}

fn sweep_lines(
    d: &CalibrationDataset,
    probs: &ProbabilityMatrix,
    scheme: &BinningScheme,
    a: &Thm3Args,
) -> CliResult<Vec<Value>> {
    let rows = gamma_sweep(probs.view(), d.labels(), d.features(), scheme, d.priors(), &a.sweep, a.exclude_self, a.delta)?;
    rows.iter()
        .map(|(g, t)| {
            Ok(rounded(json!({
                "sweep": { "gamma": g, "variance_term": t.variance_term, "bias_term": t.bias_term, "anchors": t.anchors }
            })))
        })
        .collect()
}

/// The rows to check and the tolerance to check them at. Without an explicit
/// tolerance the data is halved: one half estimates it, the other is checked.
fn data_tolerance(
    d: CalibrationDataset,
    epsilon: Option<f64>,
    single_split: bool,
    seed: u64,
    gamma: f64,
) -> CliResult<(CalibrationDataset, f64)> {
    if let Some(e) = epsilon {
        return Ok((d, e));
    }
    if single_split {
        let eps = estimate_epsilon(d.probs().view(), d.labels(), d.features(), gamma)?;
        return Ok((d, eps));
    }
    let spec = SplitSpec {
        fractions: vec![("estimate".into(), 0.5), ("check".into(), 0.5)],
        seed,
    };
    let mut parts = split(&d, &spec)?;
    let check = parts.pop().map(|p| p.1).expect("two parts");
    let est = parts.pop().map(|p| p.1).expect("two parts");
    let eps = estimate_epsilon(est.probs().view(), est.labels(), est.features(), gamma)?;
    info!("estimated tolerance {eps} on {} held-out rows", est.n());
    Ok((check, eps))
}

fn thm3(a: &Thm3Args, out: &mut Outcome) -> CliResult<()> {
    let scheme = BinningScheme::equal_width(a.bins, a.min_bin);
    let mut lines = Vec::new();
    match &a.data {
        Some(p) => {
            let (d, eps) = data_tolerance(load(p, out)?, a.epsilon, a.single_split, a.seed, a.gamma)?;
            let probs = d.probs();
            let kernel = KernelConfig::new(a.gamma, a.exclude_self)?;
            let r = verify_theorem3(
                probs.view(),
                d.labels(),
                d.features(),
                d.priors(),
                Some(eps),
                &kernel,
                a.delta,
                &scheme,
                0,
            )?;
            lines.push(to_value(&r)?);
            if !a.sweep.is_empty() {
                lines.extend(sweep_lines(&d, &probs, &scheme, a)?);
            }
        }
        None => {
            let mut cfg = Theorem3Config {
                seeds: (0..a.seeds).collect(),
                gamma: a.gamma,
                exclude_self: a.exclude_self,
                epsilon: a.epsilon.unwrap_or(0.05),
                delta: a.delta,
                bins: a.bins,
                min_bin_size: a.min_bin,
                ..Theorem3Config::default()
            };
            cfg.spec.n = a.n;
            let reports = run_theorem3(&cfg)?;
            for r in &reports {
                lines.push(to_value(r)?);
            }
            lines.push(rounded(json!({ "summary": { "runs": reports.len(), "hold_rate": hold_rate(&reports) } })));
            if !a.sweep.is_empty() {
                let (d, p, _) = constructed_sample(&cfg.spec, cfg.epsilon)?;
                lines.extend(sweep_lines(&d, &p, &scheme, a)?);
            }
        }
    }
    out.emit(jsonl(&lines)?, a.report.as_deref())
}

fn proximity_line(seed: Option<u64>, r: &ProximityReport) -> CliResult<Value> {
    Ok(rounded(json!({
        "seed": seed,
        "k": r.k,
        "delta": r.delta,
        "epsilon": r.epsilon,
        "pairs": serde_json::to_value(&r.pairs)?,
        "skipped_bins": r.skipped_bins,
        "violations": r.violations(),
    })))
}

fn thm5(a: &Thm5Args, out: &mut Outcome) -> CliResult<()> {
    let mut lines = Vec::new();
    match &a.data {
        Some(p) => {
            let (d, eps) = data_tolerance(load(p, out)?, a.epsilon, a.single_split, a.seed, a.gamma)?;
            let probs = d.probs();
            let r = verify_theorem5(probs.view(), d.labels(), d.features(), eps, a.k, a.delta, a.bins, a.min_half)?;
            lines.push(proximity_line(None, &r)?);
        }
        None => {
            let mut cfg = Theorem5Config {
                seeds: (0..a.seeds).collect(),
                epsilon: a.epsilon.unwrap_or(0.05),
                k: a.k,
                delta: a.delta,
                bins: a.bins,
                min_half: a.min_half,
                biased: a.biased,
                ..Theorem5Config::default()
            };
            cfg.spec.n = a.n;
            let runs = run_theorem5(&cfg)?;
            let (mut held, mut total) = (0, 0);
            for (seed, r) in &runs {
                total += r.pairs.len();
                held += r.pairs.len() - r.violations();
                lines.push(proximity_line(Some(*seed), r)?);
            }
            let rate = if total == 0 { f64::NAN } else { held as f64 / total as f64 };
            lines.push(rounded(json!({ "summary": { "pairs": total, "held": held, "hold_rate": rate } })));
        }
    }
    out.emit(jsonl(&lines)?, a.report.as_deref())
}

fn jsd(a: &JsdArgs, out: &mut Outcome) -> CliResult<()> {
    let spec = ConsistencySpec {
        sizes: a.sizes.clone(),
        seeds: (0..a.seeds).collect(),
        dim: a.dim,
        separation: a.separation,
        gamma0: a.gamma0,
        t_pred: a.t_pred,
    };
    let rows = jsd_consistency_experiment(&spec)?;
    let mut lines = rows.iter().map(to_value).collect::<CliResult<Vec<_>>>()?;
    let medians: Vec<Value> = median_gaps(&spec, &rows)
        .into_iter()
        .map(|(n, g)| json!({ "n": n, "median_gap": g }))
        .collect();
    lines.push(rounded(json!({ "medians": medians })));
    out.emit(jsonl(&lines)?, a.report.as_deref())
}

fn toy(a: &ToyArgs, out: &mut Outcome) -> CliResult<()> {
    let sizes: [u64; 6] = a
        .sizes
        .as_slice()
        .try_into()
        .map_err(|_| CliError::Usage("--sizes takes six values".into()))?;
    let report = toy_example(&sizes)?;
    if let Some(r) = report.region("B").and_then(|r| r.p_cal) {
        eprintln!("p_cal = {} for the low-density p = 0.6 group (B, C)", round_sig(r, 12));
    }
    for r in &report.regions {
        match r.residual {
            Some(res) => eprintln!("region {}: freq {} p_cal {} residual {:+}", r.name, r.freq, round_sig(r.p_cal.unwrap_or(f64::NAN), 12), round_sig(res, 12)),
            None => eprintln!("region {}: empty group", r.name),
        }
    }
    out.emit(pretty(&to_value(&report)?)?, a.report.as_deref())
}
