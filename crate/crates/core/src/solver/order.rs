use std::fmt;
use std::str::FromStr;

use crate::backbone::{Backbone, FlowOracle};
use crate::error::{Error, Result};
use crate::schedule::ScheduleSpec;
use crate::stats::fit_loglog_slope;

use super::steps::{corrector_second, predictor_first, predictor_second};
use super::StepParams;

/// Below this the local error is dominated by round-off.
pub const ERROR_FLOOR: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    P1Step,
    CorrectorStep,
    P2Step,
}

impl StepKind {
    pub const ALL: [StepKind; 3] = [StepKind::P1Step, StepKind::CorrectorStep, StepKind::P2Step];

    pub fn name(self) -> &'static str {
        match self {
            StepKind::P1Step => "p1",
            StepKind::CorrectorStep => "corrector",
            StepKind::P2Step => "p2",
        }
    }
}

impl fmt::Display for StepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StepKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "p1" | "p1_step" => Ok(StepKind::P1Step),
            "corrector" | "c2" | "corrector_step" => Ok(StepKind::CorrectorStep),
            "p2" | "p2_step" => Ok(StepKind::P2Step),
            _ => Err(Error::Usage(format!("unknown step kind `{s}` (p1, corrector, p2)"))),
        }
    }
}

/// Where on the exact trajectory the local error is measured.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderSetup {
    pub schedule: ScheduleSpec,
    pub t_i: f64,
    pub x_i: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderCheck {
    pub h: Vec<f64>,
    pub errors: Vec<f64>,
    pub slope: f64,
}

/// One-step error against the exact flow for each step size, with every
/// model evaluation taken on the exact trajectory, and the fitted log-log
/// slope.
pub fn order_check<B: Backbone + FlowOracle + ?Sized>(
    backbone: &B,
    kind: StepKind,
    params: &StepParams,
    setup: &OrderSetup,
    h_list: &[f64],
) -> Result<OrderCheck> {
    if h_list.len() < 2 {
        return Err(Error::Argument("need at least two step sizes".into()));
    }
    let spec = &setup.schedule;
    let pi = spec.eval(setup.t_i)?;
    let ev_i = backbone.evaluate(&setup.x_i, &pi, None)?;
    let mut errors = Vec::with_capacity(h_list.len());
    for &h in h_list {
        let pn = spec.eval(setup.t_i - h)?;
        let exact = backbone.flow(spec, &setup.x_i, setup.t_i, pn.t, None)?;
        let approx = match kind {
            StepKind::P1Step => predictor_first(&setup.x_i, &ev_i, params, &pi, &pn)?,
            StepKind::CorrectorStep => {
                let ev_n = backbone.evaluate(&exact, &pn, None)?;
                corrector_second(&setup.x_i, &ev_i, &ev_n, params, &pi, &pn)?
            }
            StepKind::P2Step => {
                let pp = spec.eval(setup.t_i + h)?;
                let x_p = backbone.flow(spec, &setup.x_i, setup.t_i, pp.t, None)?;
                let ev_p = backbone.evaluate(&x_p, &pp, None)?;
                predictor_second(&setup.x_i, &ev_p, &ev_i, params, &pp, &pi, &pn)?
            }
        };
        let err = approx
            .iter()
            .zip(&exact)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        errors.push(err);
    }
    let smallest = h_list
        .iter()
        .zip(&errors)
        .min_by(|a, b| a.0.total_cmp(b.0))
        .map(|(_, e)| *e)
        .unwrap_or(0.0);
    if smallest < ERROR_FLOOR {
        return Err(Error::Argument(format!(
            "local error {smallest:e} at the smallest step is below the round-off floor; use larger steps"
        )));
    }
    let slope = fit_loglog_slope(h_list, &errors)?;
    Ok(OrderCheck {
        h: h_list.to_vec(),
        errors,
        slope,
    })
}

/// `0.1 * 2^-k` for `k = 0..count`.
pub fn halving_steps(count: usize) -> Vec<f64> {
    (0..count).map(|k| 0.1 * 0.5f64.powi(k as i32)).collect()
}
