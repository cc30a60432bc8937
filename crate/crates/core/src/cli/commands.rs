use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde_json::json;

use super::{parse_backbone, Command, CompareArgs, InterpArgs, LearnArgs, OrderArgs, PlotArgs, SampleArgs, VerifyArgs};
use crate::backbone::{Backbone, Classifier, FlowOracle};
use crate::baselines::{baseline_sample, BaselineKind};
use crate::error::{Error, Result};
use crate::interp::interp_params;
use crate::io::write_atomic;
use crate::learning::{draw_inputs, train, LossKind, LossSpec, LossTask, OptimConfig, Teacher};
use crate::params_file::{ParamsFile, ParamsMeta, Provenance};
use crate::schedule::{ScheduleDescriptor, ScheduleSpec};
use crate::solver::{
    halving_steps, order_check, sample_batch, uniform_timesteps, Mode, OrderSetup, SampleResult, SolverConfig,
    SolverParams, StepKind, StepParams,
};
use crate::svg::{render_grid, Plot, Series};
use crate::verify::run_verify;

pub(super) fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Sample(a) => sample_cmd(a),
        Command::Learn(a) => learn_cmd(a),
        Command::Verify(a) => verify_cmd(a),
        Command::OrderCheck(a) => order_cmd(a),
        Command::Interp(a) => interp_cmd(a),
        Command::Compare(a) => compare_cmd(a),
        Command::PlotParams(a) => plot_cmd(a),
    }
}

/// Invalid flag values surface as usage errors.
fn usage(e: Error) -> Error {
    match e {
        Error::Argument(m) => Error::Usage(m),
        other => other,
    }
}

fn num(v: f64) -> String {
    format!("{v:?}")
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Io(format!("{}: {e}", path.display()));
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    write_atomic(path, &bytes)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

fn parse_mode(s: &str) -> Result<Mode> {
    s.parse()
}

enum Solver {
    Dual,
    Baseline(BaselineKind),
}

fn parse_solver(s: &str) -> Result<Solver> {
    if s == "dual" {
        Ok(Solver::Dual)
    } else {
        s.parse()
            .map(Solver::Baseline)
            .map_err(|_| Error::Usage(format!("unknown solver `{s}` (dual, ddim, dpmpp2m)")))
    }
}

fn sample_cmd(a: SampleArgs) -> Result<i32> {
    let backbone = parse_backbone(&a.backbone)?;
    let solver = parse_solver(&a.solver)?;
    let file = a.params.as_deref().map(ParamsFile::read).transpose()?;
    let schedule = match &file {
        Some(f) => f.schedule_spec()?,
        None => a.schedule.spec()?,
    };
    let steps = match (&file, a.nfe) {
        (Some(f), Some(n)) if n != f.steps => {
            return Err(Error::Usage(format!(
                "--nfe {n} does not match the parameter file (M={})",
                f.steps
            )));
        }
        (Some(f), _) => f.steps,
        (None, Some(n)) => n,
        (None, None) => 4,
    };
    let mode = match (&a.mode, file.as_ref().and_then(|f| f.mode)) {
        (Some(m), _) => parse_mode(m)?,
        (None, Some(m)) => m,
        (None, None) => Mode::P1c2,
    };
    let params = file
        .as_ref()
        .map(ParamsFile::params)
        .unwrap_or_else(|| SolverParams::default_init(steps));
    if a.batch == 0 {
        return Err(Error::Usage("--batch must be at least 1".into()));
    }
    let classes = backbone.num_classes();
    let (draw_classes, fixed) = match a.cond.as_str() {
        "none" => (0, None),
        "random" if classes > 0 => (classes, None),
        "random" => return Err(Error::Usage("--cond random needs a backbone with classes".into())),
        k => {
            let k: usize = k
                .parse()
                .map_err(|_| Error::Usage(format!("--cond must be none, random or a class index, got `{k}`")))?;
            if k >= classes {
                return Err(Error::Usage(format!("class {k} out of range ({classes} classes)")));
            }
            (0, Some(k))
        }
    };
    let (x_t, drawn) = draw_inputs(&schedule, backbone.dim(), draw_classes, a.batch, a.seed)?;
    let cond: Vec<Option<usize>> = drawn.into_iter().map(|c| c.or(fixed)).collect();
    let config = SolverConfig::new(mode, steps, schedule)
        .with_guidance(a.guidance)
        .with_trajectory(a.trajectory);
    config.validate().map_err(usage)?;

    let start = Instant::now();
    let results: Vec<SampleResult> = match solver {
        Solver::Dual => sample_batch(&backbone, &config, &params, &x_t, &cond)?,
        Solver::Baseline(kind) => {
            let ts = uniform_timesteps(&schedule, steps)?;
            x_t.par_iter()
                .zip(cond.par_iter())
                .map(|(x, c)| baseline_sample(kind, &backbone, &config, &ts, x, *c))
                .collect::<Result<_>>()?
        }
    };
    let elapsed = start.elapsed().as_secs_f64();

    let dim = backbone.dim();
    let mut header: Vec<String> = vec!["sample_id".into(), "step".into(), "t".into()];
    header.extend((0..dim).map(|j| format!("x{j}")));
    let mut rows = Vec::new();
    for (n, r) in results.iter().enumerate() {
        let states: Vec<(usize, &Vec<f64>)> = if a.trajectory {
            r.trajectory.iter().enumerate().collect()
        } else {
            vec![(steps, &r.final_state)]
        };
        for (k, x) in states {
            let mut row = vec![n.to_string(), k.to_string(), num(r.timesteps[k])];
            row.extend(x.iter().map(|v| num(*v)));
            rows.push(row);
        }
    }
    write_csv(&a.out, &header, &rows)?;
    let timesteps = results.first().map(|r| r.timesteps.clone()).unwrap_or_default();
    let summary = json!({
        "format_version": 1,
        "command": "sample",
        "solver": a.solver,
        "mode": matches!(solver, Solver::Dual).then(|| mode.name()),
        "nfe": results.first().map(|r| r.nfe).unwrap_or(steps),
        "steps": steps,
        "batch": a.batch,
        "seed": a.seed,
        "guidance": a.guidance,
        "schedule": ScheduleDescriptor::from(&schedule),
        "timesteps": timesteps,
        "wall_clock_secs": elapsed,
        "created_unix": unix_now(),
    });
    write_json(&a.summary, &summary)?;
    println!(
        "wrote {} samples ({} steps) to {}",
        results.len(),
        steps,
        a.out.display()
    );
    Ok(0)
}

fn parse_teacher(s: &str) -> Result<Teacher> {
    let (kind, steps) = s
        .split_once(':')
        .ok_or_else(|| Error::Usage(format!("--teacher expects KIND:STEPS, got `{s}`")))?;
    let steps = steps
        .parse()
        .map_err(|_| Error::Usage(format!("bad teacher step count `{steps}`")))?;
    Ok(Teacher {
        kind: kind.parse()?,
        steps,
    })
}

fn learn_cmd(a: LearnArgs) -> Result<i32> {
    let backbone = parse_backbone(&a.backbone)?;
    let schedule = a.schedule.spec()?;
    let mode = parse_mode(&a.mode)?;
    let kind: LossKind = a.loss.parse()?;
    let teacher = a.teacher.as_deref().map(parse_teacher).transpose()?;
    let spec = LossSpec {
        kind,
        batch_size: a.batch,
        teacher,
        conditional: !a.unconditional,
    };
    let config = SolverConfig::new(mode, a.nfe, schedule);
    let classifier: Option<&dyn Classifier> = backbone.as_mixture().map(|m| m as &dyn Classifier);
    let task = LossTask::new(spec, config, &backbone, classifier).map_err(usage)?;
    let optim = OptimConfig {
        lr_start: a.lr_start,
        lr_end: a.lr_end,
        total_steps: a.iters,
        fd_h: a.fd_h,
        weight_decay: a.weight_decay,
        seed: a.seed,
        ..OptimConfig::default()
    };
    optim.validate().map_err(usage)?;
    let init = match &a.init {
        Some(p) => {
            let f = ParamsFile::read(p)?;
            if f.steps != a.nfe {
                return Err(Error::Usage(format!("--init has M={} but --nfe is {}", f.steps, a.nfe)));
            }
            f.params()
        }
        None => SolverParams::default_init(a.nfe),
    };
    let result = train(&task, &optim, &init)?;
    let meta = ParamsMeta {
        schedule,
        mode: Some(mode),
        provenance: Provenance {
            seed: Some(a.seed),
            loss_kind: Some(kind.name().to_string()),
            iterations: result.iterations,
        },
    };
    ParamsFile::new(&result.params, &meta)?.write(&a.out)?;
    let rows: Vec<Vec<String>> = result
        .trace
        .iter()
        .map(|r| vec![r.iteration.to_string(), num(r.loss), num(r.lr)])
        .collect();
    write_csv(&a.trace, &["iteration".into(), "loss".into(), "lr".into()], &rows)?;
    println!(
        "{} iterations in {:.2}s: loss {:.6e} -> {:.6e}",
        result.iterations,
        result.wall_clock.as_secs_f64(),
        result.initial_loss,
        result.final_loss
    );
    Ok(0)
}

fn verify_cmd(a: VerifyArgs) -> Result<i32> {
    let spec = a.schedule.spec()?;
    let report = run_verify(&spec, a.seed);
    let value = serde_json::to_value(&report).map_err(|e| Error::Parse(e.to_string()))?;
    write_json(&a.report, &value)?;
    for s in &report.suites {
        println!("{:<22} {} ({} checks)", s.name, s.status, s.checks);
        for f in &s.failures {
            eprintln!("  {}: {f}", s.name);
        }
    }
    Ok(if report.all_pass { 0 } else { 1 })
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| v.trim().parse().map_err(|_| Error::Usage(format!("bad number `{v}`"))))
        .collect()
}

fn order_cmd(a: OrderArgs) -> Result<i32> {
    let spec = a.schedule.spec()?;
    let backbone = parse_backbone(&a.backbone)?;
    let kinds: Vec<StepKind> = if a.kind == "all" {
        StepKind::ALL.to_vec()
    } else {
        vec![a.kind.parse()?]
    };
    let setup = OrderSetup {
        schedule: spec,
        t_i: a.t_i,
        x_i: parse_list(&a.x_i)?,
    };
    if setup.x_i.len() != backbone.dim() {
        return Err(Error::Usage(format!("--x-i needs {} values", backbone.dim())));
    }
    let params = StepParams::new(a.gamma, a.tau_u, a.tau_v, a.kappa_u, a.kappa_v);
    params.validate().map_err(|e| Error::Usage(e.to_string()))?;
    if a.count < 2 {
        return Err(Error::Usage("--count must be at least 2".into()));
    }
    let hs = halving_steps(a.count);
    let mut rows = Vec::new();
    let mut series = Vec::new();
    for kind in kinds {
        let r = order_check(&backbone, kind, &params, &setup, &hs)?;
        println!("{kind:<10} slope {:.3}", r.slope);
        for (h, e) in r.h.iter().zip(&r.errors) {
            rows.push(vec![kind.name().to_string(), num(*h), num(*e), num(r.slope)]);
        }
        series.push(Series::new(
            format!("{kind} ({:.2})", r.slope),
            r.h.clone(),
            r.errors.clone(),
        ));
    }
    write_csv(
        &a.out,
        &["kind".into(), "h".into(), "error".into(), "slope".into()],
        &rows,
    )?;
    if let Some(p) = &a.svg {
        let plot = Plot {
            title: format!("local error at t={} ({})", a.t_i, spec),
            x_label: "h".into(),
            y_label: "|one-step error|".into(),
            log_x: true,
            log_y: true,
            series,
        };
        write_atomic(p, plot.render().as_bytes())?;
    }
    Ok(0)
}

fn interp_cmd(a: InterpArgs) -> Result<i32> {
    let fa = ParamsFile::read(&a.a)?;
    let fb = ParamsFile::read(&a.b)?;
    let (lo, hi) = if fa.steps <= fb.steps { (&fa, &fb) } else { (&fb, &fa) };
    if !(lo.steps < a.nfe && a.nfe < hi.steps) {
        return Err(Error::Usage(format!(
            "--nfe must lie strictly between {} and {}",
            lo.steps, hi.steps
        )));
    }
    let schedule = lo.schedule_spec()?;
    if hi.schedule_spec()? != schedule {
        return Err(Error::Argument("parameter files use different schedules".into()));
    }
    let params = interp_params(&lo.params(), &hi.params(), a.nfe)?;
    let meta = ParamsMeta {
        schedule,
        mode: if lo.mode == hi.mode { lo.mode } else { None },
        provenance: Provenance {
            seed: None,
            loss_kind: Some(format!("interp({},{})", lo.steps, hi.steps)),
            iterations: 0,
        },
    };
    ParamsFile::new(&params, &meta)?.write(&a.out)?;
    println!("wrote M={} parameters to {}", a.nfe, a.out.display());
    Ok(0)
}

fn compare_cmd(a: CompareArgs) -> Result<i32> {
    let spec = a.schedule.spec()?;
    let backbone = parse_backbone(&a.backbone)?;
    let modes: Vec<Mode> = a.modes.iter().map(|m| parse_mode(m)).collect::<Result<_>>()?;
    let baselines: Vec<BaselineKind> = a.baselines.iter().map(|b| b.parse()).collect::<Result<_>>()?;
    if a.samples == 0 || a.nfe.contains(&0) {
        return Err(Error::Usage("--samples and every --nfe must be at least 1".into()));
    }
    let (x_t, _) = draw_inputs(&spec, backbone.dim(), 0, a.samples, a.seed)?;
    let exact: Vec<Vec<f64>> = x_t
        .par_iter()
        .map(|x| backbone.flow(&spec, x, spec.t_max, spec.t_min, None))
        .collect::<Result<_>>()?;
    let error_of = |finals: Vec<Vec<f64>>| -> f64 {
        let total: f64 = finals
            .iter()
            .zip(&exact)
            .map(|(a, b)| a.iter().zip(b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max))
            .sum();
        total / finals.len() as f64
    };
    let none = vec![None; x_t.len()];
    let mut rows = Vec::new();
    let mut series: Vec<Series> = Vec::new();
    let names: Vec<String> = modes
        .iter()
        .map(|m| m.name().to_string())
        .chain(baselines.iter().map(|b| b.name().to_string()))
        .collect();
    for name in &names {
        series.push(Series::new(name.clone(), Vec::new(), Vec::new()));
    }
    for &m in &a.nfe {
        for (k, mode) in modes.iter().enumerate() {
            if mode.second_order_predictor() && m < 2 {
                continue;
            }
            let cfg = SolverConfig::new(*mode, m, spec);
            let r = sample_batch(&backbone, &cfg, &SolverParams::default_init(m), &x_t, &none)?;
            let err = error_of(r.into_iter().map(|r| r.final_state).collect());
            rows.push(vec![mode.name().to_string(), m.to_string(), num(err)]);
            series[k].x.push(m as f64);
            series[k].y.push(err);
        }
        let ts = uniform_timesteps(&spec, m)?;
        let cfg = SolverConfig::new(Mode::P1, m, spec);
        for (k, kind) in baselines.iter().enumerate() {
            let finals = x_t
                .par_iter()
                .map(|x| baseline_sample(*kind, &backbone, &cfg, &ts, x, None).map(|r| r.final_state))
                .collect::<Result<Vec<_>>>()?;
            let err = error_of(finals);
            rows.push(vec![kind.name().to_string(), m.to_string(), num(err)]);
            let s = &mut series[modes.len() + k];
            s.x.push(m as f64);
            s.y.push(err);
        }
    }
    write_csv(&a.out, &["solver".into(), "nfe".into(), "error".into()], &rows)?;
    if let Some(p) = &a.svg {
        let plot = Plot {
            title: format!("global error vs NFE ({spec})"),
            x_label: "NFE".into(),
            y_label: "mean |x_0 - exact|".into(),
            log_x: true,
            log_y: true,
            series,
        };
        write_atomic(p, plot.render().as_bytes())?;
    }
    println!("wrote {} rows to {}", rows.len(), a.out.display());
    Ok(0)
}

fn plot_cmd(a: PlotArgs) -> Result<i32> {
    let f = ParamsFile::read(&a.params)?;
    let params = f.params();
    let schedule: ScheduleSpec = f.schedule_spec()?;
    let pred: Vec<StepParams> = params.pred.iter().map(|s| s.resolve()).collect();
    let corr: Vec<StepParams> = params.corr.iter().map(|s| s.resolve()).collect();
    let idx = |n: usize| (1..=n).map(|i| i as f64).collect::<Vec<_>>();
    type Getter = fn(&StepParams) -> f64;
    let fields: [(&str, Getter); 5] = [
        ("gamma", |p| p.gamma),
        ("tau_u", |p| p.tau_u),
        ("tau_v", |p| p.tau_v),
        ("kappa_u", |p| p.kappa_u),
        ("kappa_v", |p| p.kappa_v),
    ];
    let mut plots: Vec<Plot> = fields
        .iter()
        .map(|(name, get)| {
            let mut series = vec![Series::new(
                "predictor",
                idx(pred.len()),
                pred.iter().map(get).collect(),
            )];
            if !corr.is_empty() {
                series.push(Series::new(
                    "corrector",
                    idx(corr.len()),
                    corr.iter().map(get).collect(),
                ));
            }
            Plot {
                title: (*name).to_string(),
                x_label: "step".into(),
                y_label: (*name).to_string(),
                series,
                ..Plot::default()
            }
        })
        .collect();
    let ts = params.timesteps(&schedule)?;
    plots.push(Plot {
        title: "timesteps".into(),
        x_label: "grid index".into(),
        y_label: "t".into(),
        series: vec![Series::new("t_i", (0..ts.len()).map(|i| i as f64).collect(), ts)],
        ..Plot::default()
    });
    write_atomic(&a.out, render_grid(&plots, 3).as_bytes())?;
    println!("wrote {}", a.out.display());
    Ok(0)
}
