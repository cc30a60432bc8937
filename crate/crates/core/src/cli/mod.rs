//! The `dualsolve` command line. [`run_command`] is the whole program: it
//! parses arguments, runs one subcommand inside a worker pool sized by
//! `DUALSOLVE_THREADS`, and maps the outcome to an exit status (0 success,
//! 1 runtime failure, 2 usage error).

mod commands;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::backbone::{AnalyticModel, GaussianModel, MixtureModel};
use crate::error::{Error, Result};
use crate::schedule::{ScheduleKind, ScheduleSpec, DEFAULT_T_MAX, DEFAULT_T_MIN};

pub const THREADS_ENV: &str = "DUALSOLVE_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "dualsolve",
    version,
    about = "Learned dual-prediction ODE samplers on analytic toy models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct ScheduleArgs {
    /// ot, vp-cosine, vp-linear or ve
    #[arg(long, default_value = "ot")]
    schedule: String,
    #[arg(long, default_value_t = DEFAULT_T_MIN)]
    t_min: f64,
    #[arg(long, default_value_t = DEFAULT_T_MAX)]
    t_max: f64,
}

impl ScheduleArgs {
    fn spec(&self) -> Result<ScheduleSpec> {
        let kind =
            ScheduleKind::from_parts(&self.schedule, &Default::default()).map_err(|e| Error::Usage(e.to_string()))?;
        ScheduleSpec::new(kind)
            .with_range(self.t_min, self.t_max)
            .map_err(|e| Error::Usage(e.to_string()))
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate samples and write them as CSV plus a JSON summary.
    Sample(SampleArgs),
    /// Learn solver parameters; writes a parameter file and a loss trace.
    Learn(LearnArgs),
    /// Run the invariant suites and write a pass/fail report.
    Verify(VerifyArgs),
    /// Measure local error against the exact flow and fit the order.
    OrderCheck(OrderArgs),
    /// Interpolate two parameter files to an intermediate step count.
    Interp(InterpArgs),
    /// Global error of the dual solver modes and baselines over step counts.
    Compare(CompareArgs),
    /// Plot per-step parameter curves.
    PlotParams(PlotArgs),
}

#[derive(Debug, Args)]
struct SampleArgs {
    /// dual, ddim or dpmpp2m
    #[arg(long, default_value = "dual")]
    solver: String,
    /// p1, p1c2, p2 or p2c2 (dual solver only; defaults to the file's mode, else p1c2)
    #[arg(long)]
    mode: Option<String>,
    /// Number of steps M, one model evaluation each
    #[arg(long)]
    nfe: Option<usize>,
    #[command(flatten)]
    schedule: ScheduleArgs,
    /// Learned parameters; the file's schedule and step count are used
    #[arg(long)]
    params: Option<PathBuf>,
    /// gaussian[:MEAN:STD], mixture[:MU:STD] or a JSON model file
    #[arg(long, default_value = "gaussian")]
    backbone: String,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    /// none, random, or a class index
    #[arg(long, default_value = "none")]
    cond: String,
    #[arg(long, default_value_t = 1.0)]
    guidance: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write every grid time, not only the final state
    #[arg(long)]
    trajectory: bool,
    #[arg(long, default_value = "samples.csv")]
    out: PathBuf,
    #[arg(long, default_value = "summary.json")]
    summary: PathBuf,
}

#[derive(Debug, Args)]
struct LearnArgs {
    #[arg(long, default_value = "p1c2")]
    mode: String,
    #[arg(long, default_value_t = 3)]
    nfe: usize,
    #[command(flatten)]
    schedule: ScheduleArgs,
    #[arg(long, default_value = "mixture")]
    backbone: String,
    /// hard_label, soft_label, sample_reg or trajectory_reg
    #[arg(long, default_value = "hard_label")]
    loss: String,
    /// Teacher as KIND:STEPS, e.g. dpmpp2m:32
    #[arg(long)]
    teacher: Option<String>,
    /// Sample without class conditioning (regression losses only)
    #[arg(long)]
    unconditional: bool,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 2000)]
    iters: usize,
    #[arg(long, default_value_t = 2e-3)]
    lr_start: f64,
    #[arg(long, default_value_t = 1e-4)]
    lr_end: f64,
    #[arg(long, default_value_t = 1e-4)]
    fd_h: f64,
    #[arg(long, default_value_t = 0.01)]
    weight_decay: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Start from these parameters instead of the DDIM-equivalent init
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long, default_value = "params.json")]
    out: PathBuf,
    #[arg(long, default_value = "trace.csv")]
    trace: PathBuf,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[command(flatten)]
    schedule: ScheduleArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "verify_report.json")]
    report: PathBuf,
}

#[derive(Debug, Args)]
struct OrderArgs {
    #[command(flatten)]
    schedule: ScheduleArgs,
    #[arg(long, default_value = "gaussian")]
    backbone: String,
    /// p1, corrector, p2 or all
    #[arg(long, default_value = "all")]
    kind: String,
    #[arg(long, default_value_t = 0.5)]
    t_i: f64,
    /// Start state (one value per dimension, comma separated)
    #[arg(long, default_value = "0.9")]
    x_i: String,
    /// Number of halvings of h starting from 0.1
    #[arg(long, default_value_t = 6)]
    count: usize,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    tau_u: f64,
    #[arg(long, default_value_t = 1.0)]
    tau_v: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    kappa_u: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    kappa_v: f64,
    #[arg(long, default_value = "order.csv")]
    out: PathBuf,
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InterpArgs {
    a: PathBuf,
    b: PathBuf,
    #[arg(long)]
    nfe: usize,
    #[arg(long, default_value = "interp.json")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[command(flatten)]
    schedule: ScheduleArgs,
    #[arg(long, default_value = "gaussian")]
    backbone: String,
    #[arg(long, value_delimiter = ',', default_value = "4,8,16,32,64")]
    nfe: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "p1,p1c2,p2,p2c2")]
    modes: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "ddim,dpmpp2m")]
    baselines: Vec<String>,
    #[arg(long, default_value_t = 16)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "compare.csv")]
    out: PathBuf,
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PlotArgs {
    #[arg(long)]
    params: PathBuf,
    #[arg(long, default_value = "params.svg")]
    out: PathBuf,
}

fn parse_pair(spec: &str) -> Result<Option<(f64, f64)>> {
    let parts: Vec<&str> = spec.split(':').collect();
    match parts.as_slice() {
        [_] => Ok(None),
        [_, a, b] => {
            let a = a
                .parse()
                .map_err(|_| Error::Usage(format!("bad number `{a}` in `{spec}`")))?;
            let b = b
                .parse()
                .map_err(|_| Error::Usage(format!("bad number `{b}` in `{spec}`")))?;
            Ok(Some((a, b)))
        }
        _ => Err(Error::Usage(format!("expected NAME or NAME:A:B, got `{spec}`"))),
    }
}

/// Preset name with optional parameters, or a path to a JSON model.
fn parse_backbone(spec: &str) -> Result<AnalyticModel> {
    let name = spec.split(':').next().unwrap_or_default();
    let model = match name {
        "gaussian" => {
            let (m, s) = parse_pair(spec)?.unwrap_or((0.5, 0.8));
            AnalyticModel::Gaussian(GaussianModel::isotropic(vec![m], s)?)
        }
        "mixture" => {
            let (m, s) = parse_pair(spec)?.unwrap_or((4.0, 1.0));
            AnalyticModel::Mixture(MixtureModel::symmetric_1d(m, s)?)
        }
        _ => {
            let text = std::fs::read_to_string(spec)
                .map_err(|e| Error::Usage(format!("backbone `{spec}` is not a preset or readable file: {e}")))?;
            AnalyticModel::from_json(&text)?
        }
    };
    Ok(model)
}

fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Usage(format!(
                "{THREADS_ENV} must be a positive integer, got `{v}`"
            ))),
        },
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Usage(_) => 2,
        _ => 1,
    }
}

/// Run one command line; returns the process exit status.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let outcome = threads_from_env().and_then(|threads| {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = threads {
            builder = builder.num_threads(n);
        }
        let pool = builder
            .build()
            .map_err(|e| Error::Io(format!("cannot start worker pool: {e}")))?;
        pool.install(|| commands::dispatch(cli.command))
    });
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
