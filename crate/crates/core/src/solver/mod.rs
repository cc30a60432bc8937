//! Predictor and corrector steps, learned timestep grids, and the sampling
//! loop with its four predictor/corrector configurations.

mod order;
mod sample;
mod steps;

pub use order::{halving_steps, order_check, OrderCheck, OrderSetup, StepKind};
pub use sample::{guided_eval, sample, sample_batch, SampleResult};
pub use steps::{
    corrector_second, corrector_second_in, predictor_first, predictor_first_in, predictor_second, predictor_second_in,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dual::DomainChange;
use crate::error::{Error, Result};
use crate::schedule::ScheduleSpec;

pub const GAMMA_BOUND: f64 = 4.0;
pub const TAU_FLOOR: f64 = 1e-6;
/// Number of learned scalars per step.
pub const STEP_FIELDS: usize = 5;

/// Resolved per-step coefficients fed to the update formulas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepParams {
    pub gamma: f64,
    pub tau_u: f64,
    pub tau_v: f64,
    pub kappa_u: f64,
    pub kappa_v: f64,
}

impl StepParams {
    pub fn new(gamma: f64, tau_u: f64, tau_v: f64, kappa_u: f64, kappa_v: f64) -> Self {
        StepParams {
            gamma,
            tau_u,
            tau_v,
            kappa_u,
            kappa_v,
        }
    }

    /// `gamma = 1`, `tau = 1`, no residual.
    pub fn data_default() -> Self {
        StepParams::new(1.0, 1.0, 1.0, 0.0, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.gamma, self.tau_u, self.tau_v, self.kappa_u, self.kappa_v];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("step params {self:?}")));
        }
        if !(self.tau_u > 0.0 && self.tau_v > 0.0) {
            return Err(Error::Domain(format!(
                "tau must be positive (tau_u={}, tau_v={})",
                self.tau_u, self.tau_v
            )));
        }
        Ok(())
    }
}

/// Unconstrained storage of one step's parameters, as the learner sees them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawStep {
    pub gamma: f64,
    pub tau_u_raw: f64,
    pub tau_v_raw: f64,
    pub kappa_u: f64,
    pub kappa_v: f64,
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn inv_softplus(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y + (-(-y).exp_m1()).ln()
    }
}

impl RawStep {
    pub fn default_init() -> Self {
        let t = inv_softplus(1.0);
        RawStep {
            gamma: 1.0,
            tau_u_raw: t,
            tau_v_raw: t,
            kappa_u: 0.0,
            kappa_v: 0.0,
        }
    }

    pub fn from_resolved(p: &StepParams) -> Self {
        RawStep {
            gamma: p.gamma,
            tau_u_raw: inv_softplus(p.tau_u),
            tau_v_raw: inv_softplus(p.tau_v),
            kappa_u: p.kappa_u,
            kappa_v: p.kappa_v,
        }
    }

    /// Clamp `gamma` and map the raw `tau` values through a floored softplus.
    pub fn resolve(&self) -> StepParams {
        StepParams {
            gamma: self.gamma.clamp(-GAMMA_BOUND, GAMMA_BOUND),
            tau_u: softplus(self.tau_u_raw).max(TAU_FLOOR),
            tau_v: softplus(self.tau_v_raw).max(TAU_FLOOR),
            kappa_u: self.kappa_u,
            kappa_v: self.kappa_v,
        }
    }

    /// `[gamma, tau_u_raw, tau_v_raw, kappa_u, kappa_v]`.
    pub fn fields(&self) -> [f64; STEP_FIELDS] {
        [self.gamma, self.tau_u_raw, self.tau_v_raw, self.kappa_u, self.kappa_v]
    }

    pub fn from_fields(f: [f64; STEP_FIELDS]) -> Self {
        RawStep {
            gamma: f[0],
            tau_u_raw: f[1],
            tau_v_raw: f[2],
            kappa_u: f[3],
            kappa_v: f[4],
        }
    }
}

/// Per-step parameters of an `M`-step sampler: `M` predictor sets, `M - 1`
/// corrector sets and `M` unnormalized step variables.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverParams {
    pub pred: Vec<RawStep>,
    pub corr: Vec<RawStep>,
    pub raw_steps: Vec<f64>,
}

impl SolverParams {
    /// Data-prediction init on a uniform grid. With mode p1 this is DDIM.
    pub fn default_init(steps: usize) -> Self {
        SolverParams {
            pred: vec![RawStep::default_init(); steps],
            corr: vec![RawStep::default_init(); steps.saturating_sub(1)],
            raw_steps: vec![0.0; steps],
        }
    }

    pub fn steps(&self) -> usize {
        self.pred.len()
    }

    pub fn validate(&self, steps: usize) -> Result<()> {
        let check = |field: &str, expected: usize, found: usize| {
            if expected == found {
                Ok(())
            } else {
                Err(Error::LengthMismatch {
                    field: field.to_string(),
                    expected,
                    found,
                })
            }
        };
        check("pred", steps, self.pred.len())?;
        check("corr", steps.saturating_sub(1), self.corr.len())?;
        check("raw_steps", steps, self.raw_steps.len())?;
        for (name, set) in [("pred", &self.pred), ("corr", &self.corr)] {
            for (i, s) in set.iter().enumerate() {
                if s.fields().iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("{name}[{i}]")));
                }
            }
        }
        if let Some(i) = self.raw_steps.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("raw_steps[{i}]")));
        }
        Ok(())
    }

    pub fn flat_len(steps: usize) -> usize {
        STEP_FIELDS * steps + STEP_FIELDS * steps.saturating_sub(1) + steps
    }

    /// Flatten in the fixed order `pred.gamma, pred.tau_u_raw, pred.tau_v_raw,
    /// pred.kappa_u, pred.kappa_v`, then the same five corrector arrays, then
    /// `raw_steps`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(Self::flat_len(self.steps()));
        for set in [&self.pred, &self.corr] {
            for f in 0..STEP_FIELDS {
                out.extend(set.iter().map(|s| s.fields()[f]));
            }
        }
        out.extend_from_slice(&self.raw_steps);
        out
    }

    pub fn from_flat(steps: usize, theta: &[f64]) -> Result<Self> {
        let n = Self::flat_len(steps);
        if theta.len() != n {
            return Err(Error::LengthMismatch {
                field: "theta".into(),
                expected: n,
                found: theta.len(),
            });
        }
        let mut pos = 0;
        let mut take_set = |len: usize| {
            let mut cols = [const { Vec::new() }; STEP_FIELDS];
            for col in cols.iter_mut() {
                *col = theta[pos..pos + len].to_vec();
                pos += len;
            }
            (0..len)
                .map(|i| RawStep {
                    gamma: cols[0][i],
                    tau_u_raw: cols[1][i],
                    tau_v_raw: cols[2][i],
                    kappa_u: cols[3][i],
                    kappa_v: cols[4][i],
                })
                .collect::<Vec<_>>()
        };
        let pred = take_set(steps);
        let corr = take_set(steps.saturating_sub(1));
        let raw_steps = theta[n - steps..].to_vec();
        Ok(SolverParams { pred, corr, raw_steps })
    }

    /// Human-readable name of flat coordinate `j`.
    pub fn coordinate_name(steps: usize, j: usize) -> String {
        const NAMES: [&str; STEP_FIELDS] = ["gamma", "tau_u_raw", "tau_v_raw", "kappa_u", "kappa_v"];
        let np = STEP_FIELDS * steps;
        let nc = STEP_FIELDS * steps.saturating_sub(1);
        if j < np {
            format!("pred.{}[{}]", NAMES[j / steps], j % steps)
        } else if j < np + nc {
            let k = j - np;
            let len = steps - 1;
            format!("corr.{}[{}]", NAMES[k / len], k % len)
        } else {
            format!("raw_steps[{}]", j - np - nc)
        }
    }

    /// Coordinates subject to weight decay: everything but `raw_steps`.
    pub fn decay_mask(steps: usize) -> Vec<bool> {
        let n = Self::flat_len(steps);
        (0..n).map(|j| j < n - steps).collect()
    }

    /// Coordinates that influence sampling in `mode`.
    pub fn active_mask(steps: usize, mode: Mode) -> Vec<bool> {
        let np = STEP_FIELDS * steps;
        let nc = STEP_FIELDS * steps.saturating_sub(1);
        (0..Self::flat_len(steps))
            .map(|j| mode.has_corrector() || !(np..np + nc).contains(&j))
            .collect()
    }

    /// Flat indices of the `gamma` coordinates.
    pub fn gamma_indices(steps: usize) -> Vec<usize> {
        let np = STEP_FIELDS * steps;
        (0..steps).chain(np..np + steps.saturating_sub(1)).collect()
    }

    pub fn timesteps(&self, schedule: &ScheduleSpec) -> Result<Vec<f64>> {
        timesteps(&self.raw_steps, schedule.t_max, schedule.t_min)
    }
}

/// Predictor/corrector configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    P1,
    P1c2,
    P2,
    P2c2,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::P1, Mode::P1c2, Mode::P2, Mode::P2c2];

    pub fn has_corrector(self) -> bool {
        matches!(self, Mode::P1c2 | Mode::P2c2)
    }

    pub fn second_order_predictor(self) -> bool {
        matches!(self, Mode::P2 | Mode::P2c2)
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::P1 => "p1",
            Mode::P1c2 => "p1c2",
            Mode::P2 => "p2",
            Mode::P2c2 => "p2c2",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Usage(format!("unknown mode `{s}` (p1, p1c2, p2, p2c2)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub mode: Mode,
    pub steps: usize,
    pub schedule: ScheduleSpec,
    pub guidance_scale: f64,
    pub domain: DomainChange,
    /// Keep every intermediate state in the result.
    pub record_trajectory: bool,
}

impl SolverConfig {
    pub fn new(mode: Mode, steps: usize, schedule: ScheduleSpec) -> Self {
        SolverConfig {
            mode,
            steps,
            schedule,
            guidance_scale: 1.0,
            domain: DomainChange::LogLinear,
            record_trajectory: false,
        }
    }

    pub fn with_guidance(mut self, scale: f64) -> Self {
        self.guidance_scale = scale;
        self
    }

    pub fn with_trajectory(mut self, on: bool) -> Self {
        self.record_trajectory = on;
        self
    }

    pub fn with_domain(mut self, domain: DomainChange) -> Self {
        self.domain = domain;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Argument("step count must be at least 1".into()));
        }
        if self.mode.second_order_predictor() && self.steps < 2 {
            return Err(Error::Argument(format!("mode {} needs at least 2 steps", self.mode)));
        }
        if !(self.guidance_scale >= 0.0 && self.guidance_scale.is_finite()) {
            return Err(Error::Argument(format!(
                "guidance scale must be finite and >= 0, got {}",
                self.guidance_scale
            )));
        }
        self.schedule.validate()
    }
}

/// Grid from unnormalized step variables: softmax, cumulative sum, then an
/// affine map onto `[t_start, t_end]`. Endpoints are set exactly.
pub fn timesteps(raw: &[f64], t_start: f64, t_end: f64) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(Error::Argument("need at least one step".into()));
    }
    if let Some(i) = raw.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("raw_steps[{i}]")));
    }
    if !(t_start > t_end) {
        return Err(Error::Argument(format!("t_start={t_start} must exceed t_end={t_end}")));
    }
    let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = raw.iter().map(|r| (r - max).exp()).collect();
    let total: f64 = w.iter().sum();
    let m = raw.len();
    let mut ts = Vec::with_capacity(m + 1);
    ts.push(t_start);
    let mut acc = 0.0;
    for wk in &w[..m - 1] {
        acc += wk / total;
        ts.push(t_start + (t_end - t_start) * acc);
    }
    ts.push(t_end);
    if let Some(i) = ts.windows(2).position(|p| !(p[1] < p[0])) {
        return Err(Error::DegenerateStep(format!(
            "timesteps not strictly decreasing at index {i}: {} -> {}",
            ts[i],
            ts[i + 1]
        )));
    }
    Ok(ts)
}

/// Uniform grid with `steps` intervals on the schedule's range.
pub fn uniform_timesteps(schedule: &ScheduleSpec, steps: usize) -> Result<Vec<f64>> {
    timesteps(&vec![0.0; steps], schedule.t_max, schedule.t_min)
}
