//! Noise schedules `(alpha_t, sigma_t)` with analytic derivatives.
//!
//! Time runs from `t_max` (noise) down to `t_min` (data). Every schedule is
//! evaluated in closed form; nothing here uses finite differences.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_T_MIN: f64 = 1e-3;
pub const DEFAULT_T_MAX: f64 = 1.0 - 1e-5;

/// Schedule family with its kind-specific parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleKind {
    /// `alpha = cos(pi t / 2)`, `sigma = sin(pi t / 2)`.
    VpCosine,
    /// Continuous DDPM schedule with linear `beta(t)`.
    VpLinear { beta_min: f64, beta_max: f64 },
    /// `alpha = 1`, `sigma = sigma_min (sigma_max / sigma_min)^t`.
    Ve { sigma_min: f64, sigma_max: f64 },
    /// Flow matching: `alpha = 1 - t`, `sigma = t`.
    Ot,
}

impl ScheduleKind {
    pub fn name(&self) -> &'static str {
        match self {
            ScheduleKind::VpCosine => "vp-cosine",
            ScheduleKind::VpLinear { .. } => "vp-linear",
            ScheduleKind::Ve { .. } => "ve",
            ScheduleKind::Ot => "ot",
        }
    }

    pub fn is_vp(&self) -> bool {
        matches!(self, ScheduleKind::VpCosine | ScheduleKind::VpLinear { .. })
    }

    /// Build a kind from its name and a parameter map; missing parameters
    /// take the library defaults.
    pub fn from_parts(kind: &str, params: &BTreeMap<String, f64>) -> Result<Self> {
        let get = |key: &str, default: f64| params.get(key).copied().unwrap_or(default);
        let known: &[&str] = match kind {
            "vp-cosine" | "cosine" => &[],
            "vp-linear" | "vp" | "linear" => &["beta_min", "beta_max"],
            "ve" => &["sigma_min", "sigma_max"],
            "ot" | "flow" => &[],
            other => return Err(Error::Argument(format!("unknown schedule kind `{other}`"))),
        };
        if let Some(k) = params.keys().find(|k| !known.contains(&k.as_str())) {
            return Err(Error::Argument(format!(
                "unknown parameter `{k}` for schedule `{kind}`"
            )));
        }
        let out = match kind {
            "vp-cosine" | "cosine" => ScheduleKind::VpCosine,
            "vp-linear" | "vp" | "linear" => ScheduleKind::VpLinear {
                beta_min: get("beta_min", 0.1),
                beta_max: get("beta_max", 20.0),
            },
            "ve" => ScheduleKind::Ve {
                sigma_min: get("sigma_min", 0.01),
                sigma_max: get("sigma_max", 50.0),
            },
            _ => ScheduleKind::Ot,
        };
        Ok(out)
    }

    pub fn params(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        match *self {
            ScheduleKind::VpLinear { beta_min, beta_max } => {
                m.insert("beta_min".into(), beta_min);
                m.insert("beta_max".into(), beta_max);
            }
            ScheduleKind::Ve { sigma_min, sigma_max } => {
                m.insert("sigma_min".into(), sigma_min);
                m.insert("sigma_max".into(), sigma_max);
            }
            ScheduleKind::VpCosine | ScheduleKind::Ot => {}
        }
        m
    }
}

/// A schedule restricted to the clamped time window `[t_min, t_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    pub t_min: f64,
    pub t_max: f64,
}

/// Schedule values at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchedulePoint {
    pub t: f64,
    pub alpha: f64,
    pub sigma: f64,
    pub d_alpha: f64,
    pub d_sigma: f64,
    /// Half log-SNR `log(alpha / sigma)`.
    pub lambda: f64,
    pub d_lambda: f64,
}

impl ScheduleSpec {
    pub fn new(kind: ScheduleKind) -> Self {
        ScheduleSpec {
            kind,
            t_min: DEFAULT_T_MIN,
            t_max: DEFAULT_T_MAX,
        }
    }

    pub fn ot() -> Self {
        Self::new(ScheduleKind::Ot)
    }

    pub fn vp_cosine() -> Self {
        Self::new(ScheduleKind::VpCosine)
    }

    pub fn vp_linear() -> Self {
        Self::new(ScheduleKind::VpLinear {
            beta_min: 0.1,
            beta_max: 20.0,
        })
    }

    pub fn ve() -> Self {
        Self::new(ScheduleKind::Ve {
            sigma_min: 0.01,
            sigma_max: 50.0,
        })
    }

    pub fn with_range(mut self, t_min: f64, t_max: f64) -> Result<Self> {
        self.t_min = t_min;
        self.t_max = t_max;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_min > 0.0 && self.t_min < self.t_max && self.t_max <= 1.0) {
            return Err(Error::Argument(format!(
                "schedule range must satisfy 0 < t_min < t_max <= 1, got [{}, {}]",
                self.t_min, self.t_max
            )));
        }
        match self.kind {
            ScheduleKind::VpLinear { beta_min, beta_max } => {
                if !(beta_min > 0.0 && beta_max >= beta_min && beta_max.is_finite()) {
                    return Err(Error::Argument(format!(
                        "vp-linear needs 0 < beta_min <= beta_max, got ({beta_min}, {beta_max})"
                    )));
                }
            }
            ScheduleKind::Ve { sigma_min, sigma_max } => {
                if !(sigma_min > 0.0 && sigma_max > sigma_min && sigma_max.is_finite()) {
                    return Err(Error::Argument(format!(
                        "ve needs 0 < sigma_min < sigma_max, got ({sigma_min}, {sigma_max})"
                    )));
                }
            }
            ScheduleKind::VpCosine | ScheduleKind::Ot => {}
        }
        Ok(())
    }

    /// Evaluate the schedule at `t`.
    pub fn eval(&self, t: f64) -> Result<SchedulePoint> {
        eval_schedule(self, t)
    }

    /// `(alpha, sigma)` at `t` with only the range check, so endpoints where
    /// one rate vanishes are allowed.
    pub fn rates(&self, t: f64) -> Result<(f64, f64)> {
        if !(t >= self.t_min && t <= self.t_max) {
            return Err(Error::Range {
                t,
                t_min: self.t_min,
                t_max: self.t_max,
            });
        }
        let (a, s, ..) = raw_rates(&self.kind, t);
        Ok((a, s))
    }
}

impl fmt::Display for ScheduleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}, {}]", self.kind.name(), self.t_min, self.t_max)
    }
}

pub fn eval_schedule(spec: &ScheduleSpec, t: f64) -> Result<SchedulePoint> {
    if !(t >= spec.t_min && t <= spec.t_max) {
        return Err(Error::Range {
            t,
            t_min: spec.t_min,
            t_max: spec.t_max,
        });
    }
    let (alpha, sigma, d_alpha, d_sigma, lambda) = raw_rates(&spec.kind, t);
    if !(alpha > 0.0 && sigma > 0.0) {
        return Err(Error::DegenerateSchedule(format!(
            "non-positive rates at t={t}: alpha={alpha}, sigma={sigma}"
        )));
    }
    Ok(SchedulePoint {
        t,
        alpha,
        sigma,
        d_alpha,
        d_sigma,
        lambda,
        d_lambda: d_alpha / alpha - d_sigma / sigma,
    })
}

/// Drift `f = d log(alpha)/dt` and squared diffusion `g^2 = d(sigma^2)/dt - 2 f sigma^2`.
/// `(alpha, sigma, alpha', sigma', lambda)` with no validity checks.
fn raw_rates(kind: &ScheduleKind, t: f64) -> (f64, f64, f64, f64, f64) {
    match *kind {
        ScheduleKind::VpCosine => {
            let (s, c) = (FRAC_PI_2 * t).sin_cos();
            (c, s, -FRAC_PI_2 * s, FRAC_PI_2 * c, c.ln() - s.ln())
        }
        ScheduleKind::VpLinear { beta_min, beta_max } => {
            let log_alpha = -0.25 * t * t * (beta_max - beta_min) - 0.5 * t * beta_min;
            let d_log_alpha = -0.5 * (beta_min + t * (beta_max - beta_min));
            let alpha = log_alpha.exp();
            let sigma2 = -(2.0 * log_alpha).exp_m1();
            let sigma = sigma2.sqrt();
            let d_alpha = alpha * d_log_alpha;
            let d_sigma = -alpha * d_alpha / sigma;
            (alpha, sigma, d_alpha, d_sigma, log_alpha - 0.5 * sigma2.ln())
        }
        ScheduleKind::Ve { sigma_min, sigma_max } => {
            let rate = (sigma_max / sigma_min).ln();
            let log_sigma = sigma_min.ln() + t * rate;
            let sigma = log_sigma.exp();
            (1.0, sigma, 0.0, sigma * rate, -log_sigma)
        }
        ScheduleKind::Ot => (1.0 - t, t, -1.0, 1.0, (1.0 - t).ln() - t.ln()),
    }
}

pub fn sde_coeffs(spec: &ScheduleSpec, t: f64) -> Result<(f64, f64)> {
    let p = eval_schedule(spec, t)?;
    let f = p.d_alpha / p.alpha;
    let g2 = 2.0 * p.sigma * p.d_sigma - 2.0 * f * p.sigma * p.sigma;
    Ok((f, g2))
}

/// Serializable schedule descriptor: kind string plus a parameter map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleDescriptor {
    pub kind: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub t_min: f64,
    pub t_max: f64,
}

impl From<&ScheduleSpec> for ScheduleDescriptor {
    fn from(s: &ScheduleSpec) -> Self {
        ScheduleDescriptor {
            kind: s.kind.name().to_string(),
            params: s.kind.params(),
            t_min: s.t_min,
            t_max: s.t_max,
        }
    }
}

impl TryFrom<&ScheduleDescriptor> for ScheduleSpec {
    type Error = Error;

    fn try_from(d: &ScheduleDescriptor) -> Result<Self> {
        let spec = ScheduleSpec {
            kind: ScheduleKind::from_parts(&d.kind, &d.params)?,
            t_min: d.t_min,
            t_max: d.t_max,
        };
        spec.validate()?;
        Ok(spec)
    }
}
