//! Self-check suites run by `dualsolve verify`. Each suite exercises one
//! family of invariants against closed forms or exact identities and names
//! every violated check.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::backbone::{Backbone, GaussianModel, MixtureModel};
use crate::baselines::{baseline_sample, ddim_step, BaselineKind};
use crate::dual::{branch_coeffs, interval_terms, log_linear, Direction};
use crate::error::Result;
use crate::interp::{averaged_interp, linear_interp};
use crate::learning::fd_gradient;
use crate::params_file::{decode_params, encode_params, ParamsMeta};
use crate::prediction::{extract, to_dual, DualEval, PredictionKind};
use crate::schedule::{sde_coeffs, ScheduleDescriptor, SchedulePoint, ScheduleSpec};
use crate::solver::{
    halving_steps, order_check, predictor_first, sample, Mode, OrderSetup, RawStep, SolverConfig, SolverParams,
    StepKind, StepParams,
};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub status: String,
    pub checks: usize,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub format_version: u32,
    pub schedule: ScheduleDescriptor,
    pub seed: u64,
    pub all_pass: bool,
    pub suites: Vec<SuiteReport>,
}

struct Suite {
    name: &'static str,
    checks: usize,
    failures: Vec<String>,
}

impl Suite {
    fn new(name: &'static str) -> Self {
        Suite {
            name,
            checks: 0,
            failures: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok && self.failures.len() < 20 {
            self.failures.push(what());
        }
    }

    fn close(&mut self, a: f64, b: f64, tol: f64, what: impl FnOnce() -> String) {
        let ok = (a - b).abs() <= tol * b.abs().max(1.0);
        self.check(ok, || format!("{}: {a:e} vs {b:e}", what()));
    }

    fn result<T>(&mut self, r: Result<T>, what: &str) -> Option<T> {
        match r {
            Ok(v) => Some(v),
            Err(e) => {
                self.check(false, || format!("{what}: {e}"));
                None
            }
        }
    }

    fn report(self) -> SuiteReport {
        SuiteReport {
            name: self.name.to_string(),
            status: if self.failures.is_empty() { "pass" } else { "fail" }.to_string(),
            checks: self.checks,
            failures: self.failures,
        }
    }
}

fn grid(spec: &ScheduleSpec, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| spec.t_min + (spec.t_max - spec.t_min) * (k as f64 + 0.5) / n as f64)
        .collect()
}

fn random_interval(spec: &ScheduleSpec, rng: &mut ChaCha8Rng) -> (SchedulePoint, SchedulePoint) {
    loop {
        let a = rng.random_range(spec.t_min..=spec.t_max);
        let b = rng.random_range(spec.t_min..=spec.t_max);
        if a != b {
            let (ti, tn) = if a > b { (a, b) } else { (b, a) };
            return (spec.eval(ti).expect("in range"), spec.eval(tn).expect("in range"));
        }
    }
}

fn schedule_suite(spec: &ScheduleSpec) -> SuiteReport {
    let mut s = Suite::new("schedule");
    let ts = grid(spec, 100);
    let mut prev: Option<f64> = None;
    for &t in &ts {
        let Some(p) = s.result(spec.eval(t), "eval") else {
            continue;
        };
        s.close(p.lambda, (p.alpha / p.sigma).ln(), 1e-12, || {
            format!("lambda identity at t={t}")
        });
        s.close(p.d_lambda, p.d_alpha / p.alpha - p.d_sigma / p.sigma, 1e-10, || {
            format!("d_lambda identity at t={t}")
        });
        if spec.kind.is_vp() {
            s.close(p.alpha * p.alpha + p.sigma * p.sigma, 1.0, 1e-12, || {
                format!("VP identity at t={t}")
            });
        }
        if let Some(l) = prev {
            s.check(p.lambda < l, || format!("lambda not decreasing at t={t}"));
        }
        prev = Some(p.lambda);
        let h = 1e-6_f64.min(t - spec.t_min).min(spec.t_max - t);
        if h > 1e-9 {
            if let (Ok(a), Ok(b)) = (spec.eval(t + h), spec.eval(t - h)) {
                let fd_a = (a.alpha - b.alpha) / (2.0 * h);
                let fd_s = (a.sigma - b.sigma) / (2.0 * h);
                s.close(fd_a, p.d_alpha, 1e-5, || {
                    format!("d_alpha vs central difference at t={t}")
                });
                s.close(fd_s, p.d_sigma, 1e-5, || {
                    format!("d_sigma vs central difference at t={t}")
                });
            }
        }
        if let Some((f, g2)) = s.result(sde_coeffs(spec, t), "sde_coeffs") {
            s.close(f, p.d_alpha / p.alpha, 1e-12, || format!("drift at t={t}"));
            let want = 2.0 * p.sigma * p.sigma * (-p.d_lambda);
            s.close(g2, want, 1e-9, || format!("g2 = -2 sigma^2 dlambda/dt at t={t}"));
        }
    }
    s.report()
}

fn prediction_suite(spec: &ScheduleSpec, rng: &mut ChaCha8Rng) -> SuiteReport {
    let mut s = Suite::new("prediction_roundtrip");
    let kinds = [PredictionKind::Noise, PredictionKind::Data, PredictionKind::Velocity];
    for &t in &grid(spec, 20) {
        let p = spec.eval(t).expect("in range");
        for kind in kinds {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let raw: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let Some(d) = s.result(to_dual(kind, &raw, &x, &p), "to_dual") else {
                continue;
            };
            let back = extract(kind, &d, &p);
            let scale = 1.0 + p.alpha.recip().min(1e6) + p.sigma.recip().min(1e6);
            for j in 0..3 {
                s.close(back[j], raw[j], 1e-12 * scale, || {
                    format!("{kind:?} roundtrip at t={t}")
                });
                let rebuilt = p.alpha * d.x_pred[j] + p.sigma * d.eps_pred[j];
                s.close(rebuilt, x[j], 1e-12 * scale, || {
                    format!("{kind:?} consistency at t={t}")
                });
            }
        }
    }
    s.report()
}

fn log_linear_suite() -> SuiteReport {
    let mut s = Suite::new("log_linear");
    let ys = [-0.05, 0.0, 0.3, 1.0, 1.7];
    for &tau in &[1e-12, 1e-9, 1e-6, 0.5, 1.0, 5.0] {
        for &y in &ys {
            let Some(u) = s.result(log_linear(y, tau, Direction::Forward), "forward") else {
                continue;
            };
            let Some(back) = s.result(log_linear(u, tau, Direction::Inverse), "inverse") else {
                continue;
            };
            s.close(back, y, 1e-12, || format!("roundtrip y={y} tau={tau}"));
            if tau >= 1e-8 {
                s.close(u, (tau * y).ln_1p() / tau, 1e-12, || {
                    format!("closed form y={y} tau={tau}")
                });
            } else {
                s.close(u, y, 1e-9, || format!("small-tau limit y={y} tau={tau}"));
            }
        }
    }
    s.check(log_linear(1.0, 0.0, Direction::Forward).is_err(), || {
        "tau=0 accepted".into()
    });
    s.check(log_linear(-2.0, 1.0, Direction::Forward).is_err(), || {
        "1+tau*y<=0 accepted".into()
    });
    s.report()
}

fn reduction_suite(spec: &ScheduleSpec, rng: &mut ChaCha8Rng) -> SuiteReport {
    let mut s = Suite::new("reduction_identities");
    for _ in 0..50 {
        let (pi, pn) = random_interval(spec, rng);
        let tau = rng.random_range(0.1..3.0);
        for gamma in [-1.0, 0.0, 1.0] {
            let (Some(c), Some(it)) = (
                s.result(branch_coeffs(gamma, &pi, &pn), "branch_coeffs"),
                s.result(interval_terms(gamma, tau, tau, &pi, &pn), "interval_terms"),
            ) else {
                continue;
            };
            let (a, bu, bv) = (c.a, c.b * it.dlinv_u, c.b * it.dlinv_v);
            let (want_a, want_u, want_v) = match gamma as i32 {
                -1 => (
                    pn.alpha / pi.alpha,
                    0.0,
                    pn.alpha * ((-pn.lambda).exp() - (-pi.lambda).exp()),
                ),
                0 => (1.0, pn.alpha - pi.alpha, pn.sigma - pi.sigma),
                _ => (pn.sigma / pi.sigma, pn.sigma * (pn.lambda.exp() - pi.lambda.exp()), 0.0),
            };
            let at = || format!("gamma={gamma} on [{}, {}]", pn.t, pi.t);
            s.close(a, want_a, 1e-12, || format!("A {}", at()));
            s.close(bu, want_u, 1e-12, || format!("B dL^-1_u {}", at()));
            s.close(bv, want_v, 1e-12, || format!("B dL^-1_v {}", at()));
        }
    }
    s.report()
}

/// With `kappa = 0` the first-order step is DDIM for every gamma and tau.
/// The gap is bounded by rounding in the backbone pair amplified by `A`, so
/// the tolerance scales with it.
fn ddim_suite(spec: &ScheduleSpec, rng: &mut ChaCha8Rng) -> SuiteReport {
    let mut s = Suite::new("ddim_equivalence");
    let g = GaussianModel::isotropic(vec![0.5], 0.8).expect("valid");
    let mix = MixtureModel::symmetric_1d(2.0, 0.5).expect("valid");
    let models: [&dyn Backbone; 2] = [&g, &mix];
    for _ in 0..40 {
        let (pi, pn) = random_interval(spec, rng);
        let gamma = rng.random_range(-4.0..=4.0);
        let tau = [1e-6, 0.5, 1.0, 5.0][rng.random_range(0..4)];
        let params = StepParams::new(gamma, tau, tau, 0.0, 0.0);
        for model in models {
            let x = [pi.sigma * rng.random_range(-2.0..2.0)];
            let Some(ev) = s.result(model.evaluate(&x, &pi, None), "evaluate") else {
                continue;
            };
            let want = ddim_step(&x, &ev, &pi, &pn)[0];
            let Some(got) = s.result(predictor_first(&x, &ev, &params, &pi, &pn), "predictor") else {
                continue;
            };
            let a = branch_coeffs(gamma, &pi, &pn).map(|c| c.a).unwrap_or(1.0);
            let tol = 1e-12 * (1.0 + a) * (1.0 + x[0].abs() + ev.eps_pred[0].abs());
            s.close(got[0], want, tol, || {
                format!("gamma={gamma:.3} tau={tau} on [{}, {}]", pn.t, pi.t)
            });
        }
    }
    // whole trajectories with positive gamma have no amplification
    for m in [3usize, 5, 9] {
        let mut p = SolverParams::default_init(m);
        for st in p.pred.iter_mut() {
            let gamma = rng.random_range(0.0..=4.0);
            let tau = [1e-6, 0.5, 1.0, 5.0][rng.random_range(0..4)];
            *st = RawStep::from_resolved(&StepParams::new(gamma, tau, tau, 0.0, 0.0));
        }
        let cfg = SolverConfig::new(Mode::P1, m, *spec).with_trajectory(true);
        let x = [0.7 * spec.eval(spec.t_max).expect("in range").sigma];
        for model in models {
            let (Some(a), Some(ts)) = (
                s.result(sample(model, &cfg, &p, &x, None), "sample"),
                s.result(p.timesteps(spec), "grid"),
            ) else {
                continue;
            };
            let Some(b) = s.result(baseline_sample(BaselineKind::Ddim, model, &cfg, &ts, &x, None), "ddim") else {
                continue;
            };
            for (k, (u, v)) in a.trajectory.iter().zip(&b.trajectory).enumerate() {
                s.close(u[0], v[0], 1e-9, || format!("M={m} trajectory state {k}"));
            }
        }
    }
    s.report()
}

fn order_suite(spec: &ScheduleSpec) -> SuiteReport {
    let mut s = Suite::new("local_order");
    let g = GaussianModel::isotropic(vec![0.5], 0.8).expect("valid");
    let t_i = 0.5;
    let x_i = vec![0.9 * spec.eval(t_i).expect("in range").sigma.max(0.5)];
    let setup = OrderSetup {
        schedule: *spec,
        t_i,
        x_i,
    };
    let p = StepParams::data_default();
    let hs = halving_steps(6);
    for (kind, lo, hi) in [
        (StepKind::P1Step, 1.7, 2.3),
        (StepKind::CorrectorStep, 2.6, 3.4),
        (StepKind::P2Step, 2.6, 3.4),
    ] {
        if let Some(r) = s.result(order_check(&g, kind, &p, &setup, &hs), kind.name()) {
            s.check((lo..=hi).contains(&r.slope), || {
                format!("{kind} slope {:.3} outside [{lo}, {hi}]", r.slope)
            });
        }
    }
    s.report()
}

fn params_suite(spec: &ScheduleSpec, rng: &mut ChaCha8Rng) -> SuiteReport {
    let mut s = Suite::new("params_roundtrip");
    for steps in 1..=6 {
        let theta: Vec<f64> = (0..SolverParams::flat_len(steps))
            .map(|_| rng.random_range(-1e3..1e3) * 10f64.powi(rng.random_range(-30..30)))
            .collect();
        let p = SolverParams::from_flat(steps, &theta).expect("length");
        let meta = ParamsMeta::new(*spec);
        let Some(text) = s.result(encode_params(&p, &meta), "encode") else {
            continue;
        };
        let Some(back) = s.result(decode_params(&text), "decode") else {
            continue;
        };
        let same = back
            .params()
            .to_flat()
            .iter()
            .zip(&theta)
            .all(|(a, b)| a.to_bits() == b.to_bits());
        s.check(same, || format!("bits differ after roundtrip for M={steps}"));
        s.check(back.schedule_spec().ok() == Some(*spec), || "schedule changed".into());
    }
    s.report()
}

fn interp_suite(rng: &mut ChaCha8Rng) -> SuiteReport {
    let mut s = Suite::new("interp");
    s.check(
        linear_interp(&[0.0, 1.0, 2.0], 5).ok() == Some(vec![0.0, 0.5, 1.0, 1.5, 2.0]),
        || "linear example".into(),
    );
    s.check(
        averaged_interp(&[0.0, 1.0, 2.0], &[0.0, 1.0, 2.0, 3.0, 4.0], 4).ok() == Some(vec![0.0, 1.0, 2.0, 3.0]),
        || "averaged example".into(),
    );
    for _ in 0..30 {
        let m = rng.random_range(2..10);
        let n = rng.random_range(2..20);
        let arr: Vec<f64> = (0..m).map(|_| rng.random_range(-5.0..5.0)).collect();
        let lo = arr.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = arr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if let Some(out) = s.result(linear_interp(&arr, n), "linear_interp") {
            s.check(out.iter().all(|v| *v >= lo - 1e-12 && *v <= hi + 1e-12), || {
                "outside bounds".into()
            });
            s.check(out[0] == arr[0] && out[n - 1] == arr[m - 1], || {
                "endpoints moved".into()
            });
            if n == m {
                s.check(out == arr, || "N == M is not the identity".into());
            }
        }
    }
    s.report()
}

struct Counting<'a> {
    inner: &'a GaussianModel,
    calls: AtomicUsize,
}

impl Backbone for Counting<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn evaluate(&self, x: &[f64], p: &SchedulePoint, c: Option<usize>) -> Result<DualEval> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.evaluate(x, p, c)
    }
}

fn nfe_suite(spec: &ScheduleSpec) -> SuiteReport {
    let mut s = Suite::new("nfe_count");
    let g = GaussianModel::isotropic(vec![0.5], 0.8).expect("valid");
    for mode in Mode::ALL {
        for m in 1..=6 {
            if mode.second_order_predictor() && m < 2 {
                continue;
            }
            let counting = Counting {
                inner: &g,
                calls: AtomicUsize::new(0),
            };
            let cfg = SolverConfig::new(mode, m, *spec);
            if let Some(r) = s.result(
                sample(&counting, &cfg, &SolverParams::default_init(m), &[0.2], None),
                "sample",
            ) {
                let calls = counting.calls.load(Ordering::Relaxed);
                s.check(r.nfe == m && calls == m, || {
                    format!("{mode} M={m}: {calls} evaluations")
                });
            }
        }
    }
    s.report()
}

fn fd_suite() -> SuiteReport {
    let mut s = Suite::new("fd_gradient");
    if let Some(g) = s.result(
        fd_gradient(|t| Ok(t.iter().map(|v| v * v).sum()), &[1.0, -2.0], 1e-4, None),
        "quadratic",
    ) {
        s.close(g[0], 2.0, 1e-10, || "d/dx0 of |x|^2".into());
        s.close(g[1], -4.0, 1e-10, || "d/dx1 of |x|^2".into());
    }
    if let Some(g) = s.result(fd_gradient(|_| Ok(1.25), &[0.3, 0.1], 1e-4, None), "constant") {
        s.check(g.iter().all(|v| *v == 0.0), || {
            "constant loss has non-zero gradient".into()
        });
    }
    s.report()
}

/// Run every suite. The same schedule and seed always give the same report.
pub fn run_verify(spec: &ScheduleSpec, seed: u64) -> VerifyReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let suites = vec![
        schedule_suite(spec),
        prediction_suite(spec, &mut rng),
        log_linear_suite(),
        reduction_suite(spec, &mut rng),
        ddim_suite(spec, &mut rng),
        order_suite(spec),
        params_suite(spec, &mut rng),
        interp_suite(&mut rng),
        nfe_suite(spec),
        fd_suite(),
    ];
    VerifyReport {
        format_version: REPORT_VERSION,
        schedule: ScheduleDescriptor::from(spec),
        seed,
        all_pass: suites.iter().all(|s| s.status == "pass"),
        suites,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_suite_passes_on_every_schedule() {
        for spec in [
            ScheduleSpec::ot(),
            ScheduleSpec::vp_cosine(),
            ScheduleSpec::vp_linear(),
            ScheduleSpec::ve(),
        ] {
            let r = run_verify(&spec, 7);
            assert!(r.suites.len() >= 6);
            for suite in &r.suites {
                assert_eq!(suite.status, "pass", "{spec} {}: {:?}", suite.name, suite.failures);
                assert!(suite.checks > 0);
            }
            assert!(r.all_pass);
        }
    }

    #[test]
    fn report_is_deterministic() {
        let a = run_verify(&ScheduleSpec::ot(), 3);
        let b = run_verify(&ScheduleSpec::ot(), 3);
        assert_eq!(a, b);
    }

    #[test]
    fn failing_check_is_named() {
        let mut s = Suite::new("demo");
        s.close(1.0, 2.0, 1e-12, || "one is two".into());
        let r = s.report();
        assert_eq!(r.status, "fail");
        assert!(r.failures[0].starts_with("one is two"));
    }
}
