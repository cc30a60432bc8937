//! Reference samplers: DDIM and the multistep DPM-Solver++(2M), run on the
//! same grids as the learned sampler so comparisons isolate the update rule.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backbone::Backbone;
use crate::error::{Error, Result};
use crate::prediction::DualEval;
use crate::schedule::SchedulePoint;
use crate::solver::{guided_eval, SampleResult, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Ddim,
    #[serde(rename = "dpmpp_2m")]
    DpmPp2m,
}

impl BaselineKind {
    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Ddim => "ddim",
            BaselineKind::DpmPp2m => "dpmpp2m",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ddim" => Ok(BaselineKind::Ddim),
            "dpmpp2m" | "dpmpp_2m" | "dpm++2m" => Ok(BaselineKind::DpmPp2m),
            _ => Err(Error::Usage(format!("unknown baseline `{s}` (ddim, dpmpp2m)"))),
        }
    }
}

/// `(sigma_n / sigma_i) x + (alpha_n - sigma_n alpha_i / sigma_i) x_pred`.
pub fn ddim_step(x: &[f64], eval: &DualEval, pi: &SchedulePoint, pn: &SchedulePoint) -> Vec<f64> {
    let ratio = pn.sigma / pi.sigma;
    let coef = pn.alpha - ratio * pi.alpha;
    x.iter()
        .zip(&eval.x_pred)
        .map(|(&xi, &d)| ratio * xi + coef * d)
        .collect()
}

/// DPM-Solver++(2M) step from `t_i` to `t_n`, given the data prediction at
/// the previous grid time.
pub fn dpmpp2m_step(
    x: &[f64],
    x_pred_prev: &[f64],
    eval: &DualEval,
    pp: &SchedulePoint,
    pi: &SchedulePoint,
    pn: &SchedulePoint,
) -> Result<Vec<f64>> {
    let h = pn.lambda - pi.lambda;
    let h_prev = pi.lambda - pp.lambda;
    if h == 0.0 || h_prev == 0.0 {
        return Err(Error::DegenerateStep(format!(
            "zero log-SNR interval (h={h}, h_prev={h_prev})"
        )));
    }
    let r = h_prev / h;
    let (c_cur, c_prev) = (1.0 + 0.5 / r, 0.5 / r);
    let ratio = pn.sigma / pi.sigma;
    let phi = -pn.alpha * (-h).exp_m1();
    Ok((0..x.len())
        .map(|k| {
            let d = c_cur * eval.x_pred[k] - c_prev * x_pred_prev[k];
            ratio * x[k] + phi * d
        })
        .collect())
}

/// Run a baseline over an explicit grid `t_0 > ... > t_M`. Only the
/// schedule, guidance scale and trajectory flag of `config` are used.
pub fn baseline_sample<B: Backbone + ?Sized>(
    kind: BaselineKind,
    backbone: &B,
    config: &SolverConfig,
    timesteps: &[f64],
    x_t: &[f64],
    cond: Option<usize>,
) -> Result<SampleResult> {
    if timesteps.len() < 2 {
        return Err(Error::Argument("baseline grid needs at least one interval".into()));
    }
    if timesteps.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::Argument("baseline grid must be strictly decreasing".into()));
    }
    if x_t.len() != backbone.dim() {
        return Err(Error::LengthMismatch {
            field: "x_T".into(),
            expected: backbone.dim(),
            found: x_t.len(),
        });
    }
    let points = timesteps
        .iter()
        .map(|&t| config.schedule.eval(t))
        .collect::<Result<Vec<_>>>()?;
    let m = timesteps.len() - 1;
    let record = config.record_trajectory;
    let mut x = x_t.to_vec();
    let mut trajectory = Vec::new();
    if record {
        trajectory.push(x.clone());
    }
    let mut prev_x_pred: Option<Vec<f64>> = None;
    for i in 0..m {
        let ev = guided_eval(backbone, &x, &points[i], cond, config.guidance_scale)?;
        x = match (kind, &prev_x_pred) {
            (BaselineKind::DpmPp2m, Some(prev)) => {
                dpmpp2m_step(&x, prev, &ev, &points[i - 1], &points[i], &points[i + 1])?
            }
            _ => ddim_step(&x, &ev, &points[i], &points[i + 1]),
        };
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{kind} state at step {i}")));
        }
        prev_x_pred = Some(ev.x_pred);
        if record {
            trajectory.push(x.clone());
        }
    }
    Ok(SampleResult {
        final_state: x,
        trajectory,
        provisional: Vec::new(),
        timesteps: timesteps.to_vec(),
        nfe: m,
    })
}
