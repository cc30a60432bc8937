use crate::dual::{branch_coeffs, interval_terms_with, residual, transformed, DomainChange};
use crate::error::{Error, Result};
use crate::prediction::DualEval;
use crate::schedule::SchedulePoint;

use super::StepParams;

fn check_eval(x: &[f64], eval: &DualEval, point: &SchedulePoint, what: &str) -> Result<()> {
    if eval.dim() != x.len() || eval.eps_pred.len() != x.len() {
        return Err(Error::LengthMismatch {
            field: what.into(),
            expected: x.len(),
            found: eval.dim(),
        });
    }
    if eval.t != point.t {
        return Err(Error::Usage(format!(
            "{what} evaluated at t={} but step expects t={}",
            eval.t, point.t
        )));
    }
    Ok(())
}

pub fn predictor_first(
    x: &[f64],
    eval: &DualEval,
    params: &StepParams,
    pi: &SchedulePoint,
    pn: &SchedulePoint,
) -> Result<Vec<f64>> {
    predictor_first_in(DomainChange::LogLinear, x, eval, params, pi, pn)
}

/// First-order predictor: both predictions frozen at `t_i`.
pub fn predictor_first_in(
    domain: DomainChange,
    x: &[f64],
    eval: &DualEval,
    params: &StepParams,
    pi: &SchedulePoint,
    pn: &SchedulePoint,
) -> Result<Vec<f64>> {
    params.validate()?;
    check_eval(x, eval, pi, "eval_i")?;
    let c = branch_coeffs(params.gamma, pi, pn)?;
    let it = interval_terms_with(domain, params.gamma, params.tau_u, params.tau_v, pi, pn)?;
    let wu = it.dlinv_u + residual(it.du, params.kappa_u);
    let wv = it.dlinv_v + residual(it.dv, params.kappa_v);
    Ok(x.iter()
        .zip(eval.x_pred.iter().zip(&eval.eps_pred))
        .map(|(&xi, (&d, &e))| c.a * xi + c.b * (d * wu + e * wv))
        .collect())
}

pub fn predictor_second(
    x: &[f64],
    eval_prev: &DualEval,
    eval: &DualEval,
    params: &StepParams,
    pp: &SchedulePoint,
    pi: &SchedulePoint,
    pn: &SchedulePoint,
) -> Result<Vec<f64>> {
    predictor_second_in(DomainChange::LogLinear, x, eval_prev, eval, params, pp, pi, pn)
}

/// Weight `(dLinv + K) / (2 r)` on a backward difference, where
/// `r = d_prev / d_cur` in the transformed domain. A zero current interval
/// means the term integrates to zero; a zero history interval with a
/// non-zero current one has no finite ratio.
fn history_weight(d_prev: f64, d_cur: f64, dlinv: f64, kappa: f64, which: &str) -> Result<f64> {
    if d_cur == 0.0 {
        return Ok(0.0);
    }
    if d_prev == 0.0 {
        return Err(Error::DegenerateStep(format!(
            "zero previous interval in the {which} domain"
        )));
    }
    let r = d_prev / d_cur;
    Ok((dlinv + residual(d_cur, kappa)) / (2.0 * r))
}

/// Second-order multistep predictor using the backward difference between
/// the evaluations at `t_{i-1}` and `t_i`.
#[allow(clippy::too_many_arguments)]
pub fn predictor_second_in(
    domain: DomainChange,
    x: &[f64],
    eval_prev: &DualEval,
    eval: &DualEval,
    params: &StepParams,
    pp: &SchedulePoint,
    pi: &SchedulePoint,
    pn: &SchedulePoint,
) -> Result<Vec<f64>> {
    params.validate()?;
    check_eval(x, eval_prev, pp, "eval_prev")?;
    check_eval(x, eval, pi, "eval_i")?;
    let StepParams {
        gamma, tau_u, tau_v, ..
    } = *params;
    let c = branch_coeffs(gamma, pi, pn)?;
    let it = interval_terms_with(domain, gamma, tau_u, tau_v, pi, pn)?;
    // history interval measured with this step's transform
    let (u_p, v_p) = transformed(domain, gamma, tau_u, tau_v, pp)?;
    let (u_i, v_i) = transformed(domain, gamma, tau_u, tau_v, pi)?;
    let hu = history_weight(u_i - u_p, it.du, it.dlinv_u, params.kappa_u, "u")?;
    let hv = history_weight(v_i - v_p, it.dv, it.dlinv_v, params.kappa_v, "v")?;
    let mut out = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        let dd = eval.x_pred[k] - eval_prev.x_pred[k];
        let de = eval.eps_pred[k] - eval_prev.eps_pred[k];
        let inner = eval.x_pred[k] * it.dlinv_u + dd * hu + eval.eps_pred[k] * it.dlinv_v + de * hv;
        out.push(c.a * x[k] + c.b * inner);
    }
    Ok(out)
}

pub fn corrector_second(
    x: &[f64],
    eval: &DualEval,
    eval_next: &DualEval,
    params: &StepParams,
    pi: &SchedulePoint,
    pn: &SchedulePoint,
) -> Result<Vec<f64>> {
    corrector_second_in(DomainChange::LogLinear, x, eval, eval_next, params, pi, pn)
}

/// Second-order corrector using the forward difference between the
/// evaluations at `t_i` and the provisional `t_{i+1}` state.
pub fn corrector_second_in(
    domain: DomainChange,
    x: &[f64],
    eval: &DualEval,
    eval_next: &DualEval,
    params: &StepParams,
    pi: &SchedulePoint,
    pn: &SchedulePoint,
) -> Result<Vec<f64>> {
    params.validate()?;
    check_eval(x, eval, pi, "eval_i")?;
    check_eval(x, eval_next, pn, "eval_next")?;
    let c = branch_coeffs(params.gamma, pi, pn)?;
    let it = interval_terms_with(domain, params.gamma, params.tau_u, params.tau_v, pi, pn)?;
    let hu = 0.5 * (it.dlinv_u + residual(it.du, params.kappa_u));
    let hv = 0.5 * (it.dlinv_v + residual(it.dv, params.kappa_v));
    let mut out = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        let dd = eval_next.x_pred[k] - eval.x_pred[k];
        let de = eval_next.eps_pred[k] - eval.eps_pred[k];
        let inner = eval.x_pred[k] * it.dlinv_u + dd * hu + eval.eps_pred[k] * it.dlinv_v + de * hv;
        out.push(c.a * x[k] + c.b * inner);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::ScheduleSpec;
    use approx::assert_abs_diff_eq;

    fn ot(t: f64) -> SchedulePoint {
        ScheduleSpec::ot().eval(t).unwrap()
    }

    fn pair(d: f64, e: f64, t: f64) -> DualEval {
        DualEval::new(vec![d], vec![e], &[0.0], t)
    }

    #[test]
    fn first_order_is_ddim_for_any_gamma_tau() {
        // consistent pair at t=0.8: 0.2 * 1 + 0.8 * 0.5 = 0.6
        let ev = pair(1.0, 0.5, 0.8);
        for &g in &[-4.0, -1.0, 0.0, 0.5, 3.0] {
            for &tau in &[1e-6, 0.5, 1.0, 5.0] {
                let p = StepParams::new(g, tau, tau, 0.0, 0.0);
                let out = predictor_first(&[0.6], &ev, &p, &ot(0.8), &ot(0.6)).unwrap();
                assert_abs_diff_eq!(out[0], 0.7, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn first_order_residual_example() {
        let ev = pair(1.0, 0.5, 0.8);
        let p = StepParams::new(1.0, 1.0, 1.0, 1.0, 0.0);
        let out = predictor_first(&[0.6], &ev, &p, &ot(0.8), &ot(0.6)).unwrap();
        // 0.7 + B * K(du; 1) with B = 0.6 and du = log(5/3) - log(5/4)
        let du: f64 = 0.2876821;
        assert_abs_diff_eq!(out[0], 0.7 + 0.6 * du * du, epsilon = 1e-7);
        let zero = predictor_first(&[0.0], &pair(0.0, 0.0, 0.8), &p, &ot(0.8), &ot(0.6)).unwrap();
        assert_eq!(zero, vec![0.0]);
    }

    #[test]
    fn first_order_rejects_wrong_time() {
        let ev = pair(1.0, 0.5, 0.7);
        let p = StepParams::data_default();
        assert!(matches!(
            predictor_first(&[0.6], &ev, &p, &ot(0.8), &ot(0.6)),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn second_order_predictor_examples() {
        let p = StepParams::data_default();
        let (pp, pi, pn) = (ot(1.0 - 1e-5), ot(0.8), ot(0.6));
        let ev = pair(1.0, 0.5, 0.8);
        let first = predictor_first(&[0.6], &ev, &p, &pi, &pn).unwrap();
        let same = pair(1.0, 0.5, pp.t);
        let second = predictor_second(&[0.6], &same, &ev, &p, &pp, &pi, &pn).unwrap();
        assert_eq!(first, second);

        // place t_{i-1} so that r_u = 1. With tau = 5 the u-spacing of
        // 0.8 -> 0.6 still fits below t = 1; dLinv does not depend on tau
        let tau = 5.0;
        let p = StepParams::new(1.0, tau, tau, 0.0, 0.0);
        let u = |t: f64| (tau * (1.0 - t) / t).ln_1p() / tau;
        let u_p = 2.0 * u(0.8) - u(0.6);
        let q_p = (tau * u_p).exp_m1() / tau;
        let tp = 1.0 / (1.0 + q_p);
        let pp = ot(tp);
        let prev = pair(0.8, 0.5, tp);
        let out = predictor_second(&[0.6], &prev, &ev, &p, &pp, &pi, &pn).unwrap();
        assert_abs_diff_eq!(out[0], 0.725, epsilon = 1e-7);
    }

    #[test]
    fn second_order_predictor_is_adams_bashforth() {
        // linear model x_pred = a x, eps = b x at each time; gamma = 0, tau -> 0
        let p = StepParams::new(0.0, 1e-12, 1e-12, 0.0, 0.0);
        let (pp, pi, pn) = (ot(0.7), ot(0.6), ot(0.5));
        let x = 0.9;
        let prev = pair(1.3, -0.4, 0.7);
        let cur = pair(1.1, 0.2, 0.6);
        let out = predictor_second(&[x], &prev, &cur, &p, &pp, &pi, &pn).unwrap();
        let v = |e: &DualEval| -e.x_pred[0] + e.eps_pred[0];
        let dt = -0.1;
        let ab2 = x + dt * (1.5 * v(&cur) - 0.5 * v(&prev));
        assert_abs_diff_eq!(out[0], ab2, epsilon = 1e-10);
    }

    #[test]
    fn degenerate_history_interval() {
        // gamma = 1 gives q_v = 1 everywhere: the v terms vanish quietly
        let p = StepParams::data_default();
        let out = predictor_second(
            &[0.6],
            &pair(0.9, 0.4, 0.9),
            &pair(1.0, 0.5, 0.8),
            &p,
            &ot(0.9),
            &ot(0.8),
            &ot(0.6),
        );
        assert!(out.is_ok());
        assert!(history_weight(0.0, 0.1, 0.2, 0.0, "u").is_err());
        assert_eq!(history_weight(0.0, 0.0, 0.0, 3.0, "u").unwrap(), 0.0);
    }

    #[test]
    fn corrector_examples() {
        let p = StepParams::data_default();
        let (pi, pn) = (ot(0.8), ot(0.6));
        let out = corrector_second(&[0.6], &pair(1.0, 0.5, 0.8), &pair(1.2, -3.0, 0.6), &p, &pi, &pn).unwrap();
        assert_abs_diff_eq!(out[0], 0.725, epsilon = 1e-7);

        let q = StepParams::new(0.3, 2.0, 0.5, 0.0, 0.0);
        let ev = pair(1.0, 0.5, 0.8);
        let same = pair(1.0, 0.5, 0.6);
        let c = corrector_second(&[0.6], &ev, &same, &q, &pi, &pn).unwrap();
        let f = predictor_first(&[0.6], &ev, &q, &pi, &pn).unwrap();
        assert_eq!(c, f);
        let z = corrector_second(&[0.0], &pair(0.0, 0.0, 0.8), &pair(0.0, 0.0, 0.6), &q, &pi, &pn).unwrap();
        assert_eq!(z, vec![0.0]);
    }
}
