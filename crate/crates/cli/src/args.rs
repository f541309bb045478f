use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "lcal", version, about = "Local calibration metrics, calibrators and bound checks")]
pub struct Cli {
    /// Worker threads (default: all cores). LCAL_THREADS takes precedence.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Where to write the run manifest (default: next to the main output).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,

    /// More log output on standard error; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Sample a synthetic dataset.
    Synth(SynthArgs),
    /// Split a dataset into named random parts.
    Split(SplitArgs),
    /// Fit a calibrator on a calibration set.
    Fit(FitArgs),
    /// Apply a fitted calibrator to a dataset.
    Apply(ApplyArgs),
    /// Compute ECE, ECCE, LCE, MLCE, NLL and accuracy.
    Eval(EvalArgs),
    /// Run a bound or example check.
    Verify(VerifyArgs),
    /// Rerun a recorded command and compare its outputs byte for byte.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    /// TOML generator spec; the default benchmark when omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the seed in the spec.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the row count in the spec.
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SplitArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated `name=fraction` pairs summing to 1.
    #[arg(long, default_value = "cal=0.5,test=0.5")]
    pub fractions: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Parts are written here as `<name>.<ext of --data>`.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodArg {
    Ts,
    Platt,
    Isotonic,
    Dirichlet,
    Lcn,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FitArgs {
    #[arg(long, value_enum)]
    pub method: MethodArg,
    #[arg(long)]
    pub cal: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub val_frac: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    #[arg(long, default_value_t = 22)]
    pub epochs: usize,
    /// Default: 1e-3 for lcn, 1e-2 for dirichlet.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value_t = 1024)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 50)]
    pub pca_dim: usize,
    #[arg(long, default_value_t = 0.3)]
    pub dropout: f64,
    /// Writes the lcn training trace as JSON.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ApplyArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorsArg {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantArg {
    Classwise,
    Vector,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 15)]
    pub bins: usize,
    #[arg(long, default_value_t = 10.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 20)]
    pub min_bin: usize,
    #[arg(long, value_enum, default_value_t = PriorsArg::Train)]
    pub priors: PriorsArg,
    /// Dataset whose priors stand in for the training priors.
    #[arg(long)]
    pub priors_from: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = VariantArg::Classwise)]
    pub variant: VariantArg,
    /// Keep each anchor in its own kernel sums.
    #[arg(long)]
    pub include_self: bool,
    /// Add per-class ECE, ECCE and LCE to the report.
    #[arg(long)]
    pub per_class: bool,
    /// Report file; standard output when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct VerifyArgs {
    #[command(subcommand)]
    pub which: VerifyCommand,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifyCommand {
    /// Class-wise ECE against its decomposition bound on constructed predictors.
    Thm2(Thm2Args),
    /// LCE against its variance and bias bound.
    Thm3(Thm3Args),
    /// Dense versus sparse sub-bins of each confidence bin.
    Thm5(Thm5Args),
    /// Kernel-estimate JSD gap under a shrinking bandwidth.
    Jsd(JsdArgs),
    /// The six-region recalibration example.
    Toy(ToyArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct Thm2Args {
    #[arg(long, default_value_t = 200)]
    pub trials: usize,
    #[arg(long, default_value_t = 20_000)]
    pub n: usize,
    #[arg(long, default_value_t = 15)]
    pub bins: usize,
    #[arg(long, default_value_t = 0.05)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// TOML generator spec; the default benchmark when omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// JSON-lines report; standard output when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct Thm3Args {
    /// Check this dataset instead of synthetic constructions.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Tolerance. In data mode it is otherwise estimated on a held-out half
    /// and the bound is checked on the other half.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Estimate the tolerance on the same rows that are checked.
    #[arg(long)]
    pub single_split: bool,
    /// Seed of the estimate/check split in data mode.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    #[arg(long, default_value_t = 15)]
    pub bins: usize,
    #[arg(long, default_value_t = 20)]
    pub min_bin: usize,
    #[arg(long)]
    pub exclude_self: bool,
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,
    #[arg(long, default_value_t = 600)]
    pub n: usize,
    /// Comma-separated bandwidths for a bias/variance sweep.
    #[arg(long, value_delimiter = ',')]
    pub sweep: Vec<f64>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct Thm5Args {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Tolerance. In data mode it is otherwise estimated at `--gamma` on a
    /// held-out half and the bound is checked on the other half.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub single_split: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    #[arg(long, default_value_t = 15)]
    pub bins: usize,
    #[arg(long, default_value_t = 10)]
    pub min_half: usize,
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    /// Use the proximity-biased label generator.
    #[arg(long)]
    pub biased: bool,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct JsdArgs {
    #[arg(long, value_delimiter = ',', default_values_t = vec![500, 2000, 8000])]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    #[arg(long, default_value_t = 1.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 0.3)]
    pub gamma0: f64,
    #[arg(long, default_value_t = 1.0)]
    pub t_pred: f64,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ToyArgs {
    /// Sizes of regions A to F.
    #[arg(long, value_delimiter = ',', num_args = 6, default_values_t = vec![350, 75, 75, 75, 75, 350])]
    pub sizes: Vec<u64>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

fn abs(p: &mut PathBuf) {
    if let Ok(a) = std::path::absolute(&*p) {
        *p = a;
    }
}

fn abs_opt(p: &mut Option<PathBuf>) {
    if let Some(p) = p {
        abs(p);
    }
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Split(_) => "split",
            Command::Fit(_) => "fit",
            Command::Apply(_) => "apply",
            Command::Eval(_) => "eval",
            Command::Replay(_) => "replay",
            Command::Verify(v) => match v.which {
                VerifyCommand::Thm2(_) => "verify-thm2",
                VerifyCommand::Thm3(_) => "verify-thm3",
                VerifyCommand::Thm5(_) => "verify-thm5",
                VerifyCommand::Jsd(_) => "verify-jsd",
                VerifyCommand::Toy(_) => "verify-toy",
            },
        }
    }

    /// Rewrites every path argument as an absolute path so a recorded
    /// command can be rerun from any directory.
    pub fn absolutize(&mut self) {
        match self {
            Command::Synth(a) => {
                abs_opt(&mut a.spec);
                abs(&mut a.out);
            }
            Command::Split(a) => {
                abs(&mut a.data);
                abs(&mut a.out_dir);
            }
            Command::Fit(a) => {
                abs(&mut a.cal);
                abs(&mut a.out);
                abs_opt(&mut a.trace);
            }
            Command::Apply(a) => {
                abs(&mut a.model);
                abs(&mut a.data);
                abs(&mut a.out);
            }
            Command::Eval(a) => {
                abs(&mut a.data);
                abs_opt(&mut a.priors_from);
                abs_opt(&mut a.report);
            }
            Command::Replay(a) => abs(&mut a.manifest),
            Command::Verify(v) => match &mut v.which {
                VerifyCommand::Thm2(a) => {
                    abs_opt(&mut a.spec);
                    abs_opt(&mut a.report);
                }
                VerifyCommand::Thm3(a) => {
                    abs_opt(&mut a.data);
                    abs_opt(&mut a.report);
                }
                VerifyCommand::Thm5(a) => {
                    abs_opt(&mut a.data);
                    abs_opt(&mut a.report);
                }
                VerifyCommand::Jsd(a) => abs_opt(&mut a.report),
                VerifyCommand::Toy(a) => abs_opt(&mut a.report),
            },
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Command::Synth(a) => a.seed,
            Command::Split(a) => Some(a.seed),
            Command::Fit(a) => Some(a.seed),
            Command::Verify(v) => match &v.which {
                VerifyCommand::Thm2(a) => Some(a.seed),
                VerifyCommand::Thm3(a) => a.data.as_ref().map(|_| a.seed),
                VerifyCommand::Thm5(a) => a.data.as_ref().map(|_| a.seed),
                _ => None,
            },
            _ => None,
        }
    }
}
