use rayon::prelude::*;

use crate::backbone::Backbone;
use crate::error::{Error, Result};
use crate::prediction::{apply_guidance, DualEval};
use crate::schedule::SchedulePoint;

use super::steps::{corrector_second_in, predictor_first_in, predictor_second_in};
use super::{SolverConfig, SolverParams};

#[derive(Debug, Clone, PartialEq)]
pub struct SampleResult {
    pub final_state: Vec<f64>,
    /// Accepted state at every grid time `t_0..t_M` (corrected where a
    /// corrector ran). Empty unless trajectories are recorded.
    pub trajectory: Vec<Vec<f64>>,
    /// Predictor outputs `x'_1..x'_M`. Empty unless trajectories are recorded.
    pub provisional: Vec<Vec<f64>>,
    pub timesteps: Vec<f64>,
    pub nfe: usize,
}

/// One model evaluation, with classifier-free guidance when a class is given
/// and the scale differs from 1.
pub fn guided_eval<B: Backbone + ?Sized>(
    backbone: &B,
    x: &[f64],
    point: &SchedulePoint,
    cond: Option<usize>,
    guidance_scale: f64,
) -> Result<DualEval> {
    let ev = match cond {
        Some(c) if guidance_scale != 1.0 => {
            let ec = backbone.evaluate(x, point, Some(c))?;
            let eu = backbone.evaluate(x, point, None)?;
            apply_guidance(&ec, &eu, guidance_scale, x, point)?
        }
        _ => backbone.evaluate(x, point, cond)?,
    };
    if ev.x_pred.iter().chain(&ev.eps_pred).any(|v| !v.is_finite()) {
        return Err(Error::Backbone(format!("non-finite prediction at t={}", point.t)));
    }
    Ok(ev)
}

/// Predictor-corrector sampling from `x_T` at `t_0` down to `t_M`.
///
/// Every model evaluation is taken at a provisional (predictor) state, and
/// the last step returns the predictor output without correction, so the
/// evaluation count is exactly `M`.
pub fn sample<B: Backbone + ?Sized>(
    backbone: &B,
    config: &SolverConfig,
    params: &SolverParams,
    x_t: &[f64],
    cond: Option<usize>,
) -> Result<SampleResult> {
    config.validate()?;
    params.validate(config.steps)?;
    if x_t.len() != backbone.dim() {
        return Err(Error::LengthMismatch {
            field: "x_T".into(),
            expected: backbone.dim(),
            found: x_t.len(),
        });
    }
    let m = config.steps;
    let ts = params.timesteps(&config.schedule)?;
    let points = ts
        .iter()
        .map(|&t| config.schedule.eval(t))
        .collect::<Result<Vec<_>>>()?;
    let record = config.record_trajectory;
    let eval = |x: &[f64], p: &SchedulePoint| guided_eval(backbone, x, p, cond, config.guidance_scale);

    let mut cache: Vec<DualEval> = Vec::with_capacity(m);
    cache.push(eval(x_t, &points[0])?);
    let mut x = x_t.to_vec();
    let mut trajectory = Vec::new();
    let mut provisional = Vec::new();
    if record {
        trajectory.push(x.clone());
    }

    for i in 0..m {
        let step = params.pred[i].resolve();
        let cur = &cache[i];
        let x_prov = if config.mode.second_order_predictor() && i > 0 {
            predictor_second_in(
                config.domain,
                &x,
                &cache[i - 1],
                cur,
                &step,
                &points[i - 1],
                &points[i],
                &points[i + 1],
            )?
        } else {
            predictor_first_in(config.domain, &x, cur, &step, &points[i], &points[i + 1])?
        };
        if x_prov.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("provisional state at step {i}")));
        }
        if record {
            provisional.push(x_prov.clone());
        }
        if i + 1 == m {
            if record {
                trajectory.push(x_prov.clone());
            }
            x = x_prov;
            break;
        }
        let next = eval(&x_prov, &points[i + 1])?;
        x = if config.mode.has_corrector() {
            let cstep = params.corr[i].resolve();
            corrector_second_in(config.domain, &x, &cache[i], &next, &cstep, &points[i], &points[i + 1])?
        } else {
            x_prov
        };
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("corrected state at step {i}")));
        }
        cache.push(next);
        if record {
            trajectory.push(x.clone());
        }
    }

    Ok(SampleResult {
        final_state: x,
        trajectory,
        provisional,
        timesteps: ts,
        nfe: cache.len(),
    })
}

/// Sample a batch in parallel. Results keep input order, so the output is
/// independent of the worker count.
pub fn sample_batch<B: Backbone + ?Sized>(
    backbone: &B,
    config: &SolverConfig,
    params: &SolverParams,
    x_t: &[Vec<f64>],
    cond: &[Option<usize>],
) -> Result<Vec<SampleResult>> {
    if cond.len() != x_t.len() {
        return Err(Error::LengthMismatch {
            field: "cond".into(),
            expected: x_t.len(),
            found: cond.len(),
        });
    }
    x_t.par_iter()
        .zip(cond.par_iter())
        .map(|(x, c)| sample(backbone, config, params, x, *c))
        .collect()
}
