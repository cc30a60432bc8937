//! Scalar kernel shared by every solver step: the gamma-branch coefficients
//! `A`, `B`, the quantities `q_u`, `q_v` whose increments replace the
//! integrals of the dual-prediction form, the domain-change transforms, and
//! the residual term.
//!
//! For `gamma >= 0` the state decays like `sigma^gamma`; for `gamma < 0` it
//! decays like `alpha^-gamma`. `gamma = -1, 0, 1` give the noise, velocity
//! and data integral forms respectively.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::SchedulePoint;

/// Below this `tau` the log-linear transform switches to its series.
pub const TAU_SERIES_THRESHOLD: f64 = 1e-8;

const EXP_LIMIT: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    GammaNonneg,
    GammaNeg,
}

impl Branch {
    pub fn of(gamma: f64) -> Self {
        if gamma >= 0.0 {
            Branch::GammaNonneg
        } else {
            Branch::GammaNeg
        }
    }
}

/// State multiplier `A` and integral multiplier `B` of one interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchCoeffs {
    pub a: f64,
    pub b: f64,
    pub branch: Branch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Domain-change function applied to `q_u`, `q_v` before measuring steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DomainChange {
    /// `log(1 + tau y) / tau`.
    #[default]
    LogLinear,
    /// `(1 - tau) y + tau log y`.
    Type1,
}

/// Increments of one interval, untransformed (`dlinv_*`) and transformed (`du`, `dv`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalTerms {
    pub dlinv_u: f64,
    pub dlinv_v: f64,
    pub du: f64,
    pub dv: f64,
    pub q_u_i: f64,
    pub q_v_i: f64,
}

fn check_point(p: &SchedulePoint) -> Result<()> {
    if !(p.alpha > 0.0 && p.sigma > 0.0) {
        return Err(Error::Domain(format!(
            "non-positive rates at t={}: alpha={}, sigma={}",
            p.t, p.alpha, p.sigma
        )));
    }
    Ok(())
}

pub fn branch_coeffs(gamma: f64, pi: &SchedulePoint, pn: &SchedulePoint) -> Result<BranchCoeffs> {
    check_point(pi)?;
    check_point(pn)?;
    if !gamma.is_finite() {
        return Err(Error::Domain(format!("gamma must be finite, got {gamma}")));
    }
    let branch = Branch::of(gamma);
    let (a, b) = match branch {
        Branch::GammaNonneg => ((pn.sigma / pi.sigma).powf(gamma), pn.sigma.powf(gamma)),
        Branch::GammaNeg => ((pn.alpha / pi.alpha).powf(-gamma), pn.alpha.powf(-gamma)),
    };
    Ok(BranchCoeffs { a, b, branch })
}

/// `(q_u, q_v)` at one time: `(alpha sigma^-g, sigma^(1-g))` for `g >= 0`,
/// `(alpha^(1+g), sigma alpha^g)` for `g < 0`.
pub fn quantities(gamma: f64, p: &SchedulePoint) -> Result<(f64, f64)> {
    check_point(p)?;
    let exponent = gamma.abs() * p.sigma.ln().abs().max(p.alpha.ln().abs());
    if !(exponent <= EXP_LIMIT) {
        return Err(Error::Overflow(format!(
            "gamma={gamma} at t={} gives exponent {exponent}",
            p.t
        )));
    }
    Ok(if gamma >= 0.0 {
        (p.alpha * p.sigma.powf(-gamma), p.sigma.powf(1.0 - gamma))
    } else {
        (p.alpha.powf(1.0 + gamma), p.sigma * p.alpha.powf(gamma))
    })
}

/// Log-linear transform `L(y; tau) = log1p(tau y) / tau` and its inverse
/// `expm1(tau u) / tau`.
pub fn log_linear(y: f64, tau: f64, direction: Direction) -> Result<f64> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Domain(format!("tau must be positive, got {tau}")));
    }
    match direction {
        Direction::Forward => {
            let arg = tau * y;
            if !(1.0 + arg > 0.0) {
                return Err(Error::Domain(format!("1 + tau*y <= 0 (tau={tau}, y={y})")));
            }
            if tau < TAU_SERIES_THRESHOLD {
                Ok(y * (1.0 - arg / 2.0 + arg * arg / 3.0))
            } else {
                Ok(arg.ln_1p() / tau)
            }
        }
        Direction::Inverse => {
            let arg = tau * y;
            if !arg.is_finite() {
                return Err(Error::Domain(format!("tau*u not finite (tau={tau}, u={y})")));
            }
            if tau < TAU_SERIES_THRESHOLD {
                Ok(y * (1.0 + arg / 2.0 + arg * arg / 6.0))
            } else {
                let out = arg.exp_m1() / tau;
                if out.is_finite() {
                    Ok(out)
                } else {
                    Err(Error::Overflow(format!("expm1({arg}) overflows")))
                }
            }
        }
    }
}

/// Type-1 transform `(1 - tau) y + tau log y`. The inverse is solved by
/// safeguarded Newton inside a bisection bracket.
pub fn type1_transform(y: f64, tau: f64, direction: Direction) -> Result<f64> {
    if !tau.is_finite() {
        return Err(Error::Domain(format!("tau must be finite, got {tau}")));
    }
    match direction {
        Direction::Forward => {
            if !(y > 0.0) {
                return Err(Error::Domain(format!("type-1 transform needs y > 0, got {y}")));
            }
            Ok((1.0 - tau) * y + tau * y.ln())
        }
        Direction::Inverse => type1_inverse(y, tau),
    }
}

fn type1_inverse(u: f64, tau: f64) -> Result<f64> {
    if !u.is_finite() {
        return Err(Error::Domain(format!("type-1 inverse of non-finite {u}")));
    }
    let f = |y: f64| (1.0 - tau) * y + tau * y.ln() - u;
    let df = |y: f64| (1.0 - tau) + tau / y;

    let (mut lo, mut hi) = (1.0f64, 1.0f64);
    let mut tries = 0;
    while f(lo) > 0.0 {
        lo *= 0.5;
        tries += 1;
        if tries > 2000 || lo == 0.0 {
            return Err(Error::Convergence(format!(
                "cannot bracket type-1 inverse of {u} (tau={tau})"
            )));
        }
    }
    tries = 0;
    while f(hi) < 0.0 {
        hi *= 2.0;
        tries += 1;
        if tries > 2000 || !hi.is_finite() {
            return Err(Error::Convergence(format!(
                "cannot bracket type-1 inverse of {u} (tau={tau})"
            )));
        }
    }
    let mut y = 0.5 * (lo + hi);
    for _ in 0..200 {
        let fy = f(y);
        if fy == 0.0 {
            return Ok(y);
        }
        if fy < 0.0 {
            lo = y;
        } else {
            hi = y;
        }
        let d = df(y);
        let newton = y - fy / d;
        let next = if d != 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - y).abs() <= 1e-12 * y.abs().max(1e-300) || hi - lo <= 1e-15 * hi {
            return Ok(next);
        }
        y = next;
    }
    Err(Error::Convergence(format!(
        "type-1 inverse of {u} did not converge (tau={tau})"
    )))
}

/// Forward domain change used to measure step sizes.
pub fn transform(domain: DomainChange, y: f64, tau: f64) -> Result<f64> {
    match domain {
        DomainChange::LogLinear => log_linear(y, tau, Direction::Forward),
        DomainChange::Type1 => type1_transform(y, tau, Direction::Forward),
    }
}

/// Transformed coordinates `(u, v)` of one time under the given parameters.
pub fn transformed(domain: DomainChange, gamma: f64, tau_u: f64, tau_v: f64, p: &SchedulePoint) -> Result<(f64, f64)> {
    let (qu, qv) = quantities(gamma, p)?;
    Ok((transform(domain, qu, tau_u)?, transform(domain, qv, tau_v)?))
}

pub fn interval_terms(
    gamma: f64,
    tau_u: f64,
    tau_v: f64,
    pi: &SchedulePoint,
    pn: &SchedulePoint,
) -> Result<IntervalTerms> {
    interval_terms_with(DomainChange::LogLinear, gamma, tau_u, tau_v, pi, pn)
}

pub fn interval_terms_with(
    domain: DomainChange,
    gamma: f64,
    tau_u: f64,
    tau_v: f64,
    pi: &SchedulePoint,
    pn: &SchedulePoint,
) -> Result<IntervalTerms> {
    let (qu_i, qv_i) = quantities(gamma, pi)?;
    let (qu_n, qv_n) = quantities(gamma, pn)?;
    let du = transform(domain, qu_n, tau_u)? - transform(domain, qu_i, tau_u)?;
    let dv = transform(domain, qv_n, tau_v)? - transform(domain, qv_i, tau_v)?;
    Ok(IntervalTerms {
        dlinv_u: qu_n - qu_i,
        dlinv_v: qv_n - qv_i,
        du,
        dv,
        q_u_i: qu_i,
        q_v_i: qv_i,
    })
}

/// Residual `K(delta; kappa) = kappa * delta^2`.
pub fn residual(delta: f64, kappa: f64) -> f64 {
    kappa * delta * delta
}

/// Linear-term coefficient `beta` of the differential form for this `gamma`.
pub fn beta_of_gamma(gamma: f64, p: &SchedulePoint) -> f64 {
    if gamma >= 0.0 {
        gamma * p.d_sigma / p.sigma
    } else {
        -gamma * p.d_alpha / p.alpha
    }
}
