use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, Classifier};
use crate::baselines::{baseline_sample, BaselineKind};
use crate::error::{Error, Result};
use crate::schedule::ScheduleSpec;
use crate::solver::{sample, uniform_timesteps, SolverConfig, SolverParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    HardLabel,
    SoftLabel,
    SampleReg,
    TrajectoryReg,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::HardLabel => "hard_label",
            LossKind::SoftLabel => "soft_label",
            LossKind::SampleReg => "sample_reg",
            LossKind::TrajectoryReg => "trajectory_reg",
        }
    }

    pub fn needs_teacher(self) -> bool {
        self != LossKind::HardLabel
    }

    pub fn needs_classifier(self) -> bool {
        matches!(self, LossKind::HardLabel | LossKind::SoftLabel)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "hard_label" => Ok(LossKind::HardLabel),
            "soft_label" => Ok(LossKind::SoftLabel),
            "sample_reg" => Ok(LossKind::SampleReg),
            "trajectory_reg" => Ok(LossKind::TrajectoryReg),
            _ => Err(Error::Usage(format!(
                "unknown loss `{s}` (hard_label, soft_label, sample_reg, trajectory_reg)"
            ))),
        }
    }
}

/// Reference sampler the student imitates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Teacher {
    pub kind: BaselineKind,
    pub steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub batch_size: usize,
    pub teacher: Option<Teacher>,
    /// Draw a class label per batch member and condition the backbone on it.
    /// Always on for the label losses.
    pub conditional: bool,
}

impl LossSpec {
    pub fn hard_label(batch_size: usize) -> Self {
        LossSpec {
            kind: LossKind::HardLabel,
            batch_size,
            teacher: None,
            conditional: true,
        }
    }

    pub fn with_teacher(kind: LossKind, batch_size: usize, teacher: Teacher) -> Self {
        LossSpec {
            kind,
            batch_size,
            teacher: Some(teacher),
            conditional: true,
        }
    }
}

/// Fixed random inputs of one loss evaluation, plus whatever teacher output
/// does not depend on the student parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x_t: Vec<Vec<f64>>,
    pub cond: Vec<Option<usize>>,
    pub teacher_final: Vec<Vec<f64>>,
}

/// Starting states and (optional) class labels.
pub type DrawnInputs = (Vec<Vec<f64>>, Vec<Option<usize>>);

/// Initial states `x_T = sigma(t_max) z` with `z ~ N(0, I)` and, when
/// `classes > 0`, uniform labels. Member `n` always uses the same stretch of
/// the generator, whatever the batch size.
pub fn draw_inputs(
    schedule: &ScheduleSpec,
    dim: usize,
    classes: usize,
    count: usize,
    seed: u64,
) -> Result<DrawnInputs> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma0 = schedule.eval(schedule.t_max)?.sigma;
    let mut x_t = Vec::with_capacity(count);
    let mut cond = Vec::with_capacity(count);
    for _ in 0..count {
        x_t.push(
            (0..dim)
                .map(|_| sigma0 * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        );
        cond.push((classes > 0).then(|| rng.random_range(0..classes)));
    }
    Ok((x_t, cond))
}

/// Everything needed to turn solver parameters into a scalar loss.
pub struct LossTask<'a, B: Backbone + ?Sized> {
    pub spec: LossSpec,
    pub config: SolverConfig,
    pub backbone: &'a B,
    pub classifier: Option<&'a dyn Classifier>,
}

/// Cross-entropy of class `y` under unnormalized log-probabilities,
/// `log(1 + sum_{k != y} exp(l_k - l_y))`, accurate when the loss is tiny.
pub fn hard_label_ce(logits: &[f64], y: usize) -> f64 {
    let ly = logits[y];
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if ly >= m {
        let rest: f64 = logits
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != y)
            .map(|(_, l)| (l - ly).exp())
            .sum();
        rest.ln_1p()
    } else {
        let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
        m + z.ln() - ly
    }
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lz = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lz).collect()
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

/// Sampler failures caused by the parameters count as divergence.
fn as_loss(r: Result<f64>) -> Result<f64> {
    match r {
        Err(Error::NonFinite(_) | Error::Backbone(_) | Error::Overflow(_) | Error::DegenerateStep(_)) => Ok(f64::NAN),
        other => other,
    }
}

impl<'a, B: Backbone + ?Sized> LossTask<'a, B> {
    pub fn new(
        spec: LossSpec,
        config: SolverConfig,
        backbone: &'a B,
        classifier: Option<&'a dyn Classifier>,
    ) -> Result<Self> {
        let task = LossTask {
            spec,
            config,
            backbone,
            classifier,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let spec = &self.spec;
        if spec.batch_size == 0 {
            return Err(Error::Argument("batch size must be at least 1".into()));
        }
        if spec.kind.needs_teacher() {
            match spec.teacher {
                None => {
                    return Err(Error::Argument(format!("loss {} needs a teacher", spec.kind)));
                }
                Some(t) if t.steps == 0 => {
                    return Err(Error::Argument("teacher needs at least 1 step".into()));
                }
                _ => {}
            }
        }
        if spec.kind.needs_classifier() {
            if self.classifier.is_none() {
                return Err(Error::Argument(format!("loss {} needs a classifier", spec.kind)));
            }
            if !spec.conditional || self.backbone.num_classes() < 2 {
                return Err(Error::Argument(format!(
                    "loss {} needs a conditional backbone with at least 2 classes",
                    spec.kind
                )));
            }
        }
        Ok(())
    }

    fn conditional(&self) -> bool {
        self.spec.conditional && self.backbone.num_classes() > 0
    }

    fn teacher_config(&self) -> SolverConfig {
        SolverConfig {
            record_trajectory: false,
            ..self.config
        }
    }

    /// Draw `x_T = sigma(t_max) z` and labels for `seed`, and run the
    /// teacher where its output does not depend on the student.
    pub fn draw(&self, seed: u64) -> Result<Batch> {
        let (x_t, cond) = draw_inputs(
            &self.config.schedule,
            self.backbone.dim(),
            if self.conditional() {
                self.backbone.num_classes()
            } else {
                0
            },
            self.spec.batch_size,
            seed,
        )?;
        let teacher_final = match (self.spec.kind, self.spec.teacher) {
            (LossKind::SoftLabel | LossKind::SampleReg, Some(t)) => {
                let ts = uniform_timesteps(&self.config.schedule, t.steps)?;
                let cfg = self.teacher_config();
                x_t.par_iter()
                    .zip(cond.par_iter())
                    .map(|(x, c)| baseline_sample(t.kind, self.backbone, &cfg, &ts, x, *c).map(|r| r.final_state))
                    .collect::<Result<Vec<_>>>()?
            }
            _ => Vec::new(),
        };
        Ok(Batch {
            x_t,
            cond,
            teacher_final,
        })
    }

    fn member_loss(&self, params: &SolverParams, batch: &Batch, n: usize) -> Result<f64> {
        let (x, c) = (&batch.x_t[n], batch.cond[n]);
        let want_traj = self.spec.kind == LossKind::TrajectoryReg;
        let cfg = SolverConfig {
            record_trajectory: want_traj,
            ..self.config
        };
        let r = sample(self.backbone, &cfg, params, x, c)?;
        match self.spec.kind {
            LossKind::HardLabel => {
                let logits = self.classifier_ref()?.log_posterior(&r.final_state)?;
                let y = c.ok_or_else(|| Error::Argument("hard-label loss needs labels".into()))?;
                Ok(hard_label_ce(&logits, y))
            }
            LossKind::SoftLabel => {
                let clf = self.classifier_ref()?;
                let p_teacher = clf.posterior(&batch.teacher_final[n])?;
                let log_student = log_softmax(&clf.log_posterior(&r.final_state)?);
                Ok(-p_teacher
                    .iter()
                    .zip(&log_student)
                    .map(|(p, l)| if *p > 0.0 { p * l } else { 0.0 })
                    .sum::<f64>())
            }
            LossKind::SampleReg => Ok(mse(&r.final_state, &batch.teacher_final[n])),
            LossKind::TrajectoryReg => {
                let t = self.spec.teacher.expect("validated");
                let m = r.timesteps.len() - 1;
                let sub = t.steps.div_ceil(m).max(1);
                let tcfg = self.teacher_config();
                let mut xt = x.clone();
                let mut total = 0.0;
                for i in 0..m {
                    let (a, b) = (r.timesteps[i], r.timesteps[i + 1]);
                    let grid: Vec<f64> = (0..=sub)
                        .map(|k| {
                            if k == sub {
                                b
                            } else {
                                a + (b - a) * k as f64 / sub as f64
                            }
                        })
                        .collect();
                    xt = baseline_sample(t.kind, self.backbone, &tcfg, &grid, &xt, c)?.final_state;
                    total += mse(&r.trajectory[i + 1], &xt);
                }
                Ok(total / m as f64)
            }
        }
    }

    fn classifier_ref(&self) -> Result<&'a dyn Classifier> {
        self.classifier
            .ok_or_else(|| Error::Argument(format!("loss {} needs a classifier", self.spec.kind)))
    }

    /// Mean loss over a fixed batch. Members run in parallel but are summed
    /// in index order, so the value does not depend on the worker count.
    pub fn loss_on(&self, params: &SolverParams, batch: &Batch) -> Result<f64> {
        let per: Vec<f64> = (0..batch.x_t.len())
            .into_par_iter()
            .map(|n| as_loss(self.member_loss(params, batch, n)))
            .collect::<Result<_>>()?;
        let loss = per.iter().sum::<f64>() / per.len() as f64;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                iteration: 0,
                loss,
                params: params.to_flat(),
            });
        }
        Ok(loss)
    }

    /// Loss at `params` on the batch drawn from `seed`.
    pub fn loss(&self, params: &SolverParams, seed: u64) -> Result<f64> {
        let batch = self.draw(seed)?;
        self.loss_on(params, &batch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{FlowOracle, MixtureModel};
    use crate::schedule::ScheduleSpec;
    use crate::solver::Mode;
    use approx::assert_abs_diff_eq;

    #[test]
    fn ce_of_symmetric_logits_is_ln2() {
        assert_abs_diff_eq!(hard_label_ce(&[-3.0, -3.0], 0), std::f64::consts::LN_2, epsilon = 1e-15);
        assert_abs_diff_eq!(hard_label_ce(&[0.0, 2.0], 0), (1.0 + 2f64.exp()).ln(), epsilon = 1e-14);
    }

    #[test]
    fn exact_flow_on_well_separated_mixture_gives_tiny_ce() {
        let mix = MixtureModel::symmetric_1d(10.0, 1.0).unwrap();
        let s = ScheduleSpec::ot();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let y = rng.random_range(0..2);
            let z: f64 = rng.sample(StandardNormal);
            let x0 = mix.flow(&s, &[z], s.t_max, s.t_min, Some(y)).unwrap();
            worst = worst.max(hard_label_ce(&mix.log_posterior(&x0).unwrap(), y));
        }
        assert!(worst <= 1e-6, "{worst}");
    }

    #[test]
    fn output_midway_between_components_gives_ln2() {
        let mix = MixtureModel::symmetric_1d(4.0, 1.0).unwrap();
        let ce = hard_label_ce(&mix.log_posterior(&[0.0]).unwrap(), 1);
        assert_abs_diff_eq!(ce, 0.6931472, epsilon = 1e-7);
    }

    #[test]
    fn trajectory_self_regression_is_zero() {
        let mix = MixtureModel::symmetric_1d(4.0, 1.0).unwrap();
        let spec = LossSpec::with_teacher(
            LossKind::TrajectoryReg,
            8,
            Teacher {
                kind: BaselineKind::Ddim,
                steps: 5,
            },
        );
        let cfg = SolverConfig::new(Mode::P1, 5, ScheduleSpec::ot());
        let task = LossTask::new(spec, cfg, &mix, None).unwrap();
        let l = task.loss(&SolverParams::default_init(5), 1).unwrap();
        assert!(l < 1e-24, "{l}");
    }

    #[test]
    fn sample_reg_against_same_sampler_is_zero() {
        let mix = MixtureModel::symmetric_1d(4.0, 1.0).unwrap();
        let t = Teacher {
            kind: BaselineKind::Ddim,
            steps: 4,
        };
        let cfg = SolverConfig::new(Mode::P1, 4, ScheduleSpec::vp_cosine());
        let task = LossTask::new(LossSpec::with_teacher(LossKind::SampleReg, 8, t), cfg, &mix, None).unwrap();
        assert!(task.loss(&SolverParams::default_init(4), 2).unwrap() < 1e-24);
    }

    #[test]
    fn soft_label_is_at_least_teacher_entropy() {
        let mix = MixtureModel::symmetric_1d(1.0, 1.0).unwrap();
        let t = Teacher {
            kind: BaselineKind::DpmPp2m,
            steps: 20,
        };
        let cfg = SolverConfig::new(Mode::P1c2, 3, ScheduleSpec::ot());
        let task = LossTask::new(
            LossSpec::with_teacher(LossKind::SoftLabel, 16, t),
            cfg,
            &mix,
            Some(&mix),
        )
        .unwrap();
        let l = task.loss(&SolverParams::default_init(3), 4).unwrap();
        assert!(l.is_finite() && l > 0.0);
    }

    #[test]
    fn same_seed_same_batch_and_loss() {
        let mix = MixtureModel::symmetric_1d(4.0, 1.0).unwrap();
        let cfg = SolverConfig::new(Mode::P1c2, 3, ScheduleSpec::ot());
        let task = LossTask::new(LossSpec::hard_label(32), cfg, &mix, Some(&mix)).unwrap();
        assert_eq!(task.draw(9).unwrap(), task.draw(9).unwrap());
        assert_ne!(task.draw(9).unwrap(), task.draw(10).unwrap());
        let p = SolverParams::default_init(3);
        assert_eq!(task.loss(&p, 9).unwrap().to_bits(), task.loss(&p, 9).unwrap().to_bits());
    }

    #[test]
    fn validation() {
        let mix = MixtureModel::symmetric_1d(4.0, 1.0).unwrap();
        let cfg = SolverConfig::new(Mode::P1, 3, ScheduleSpec::ot());
        assert!(LossTask::new(LossSpec::hard_label(4), cfg, &mix, None).is_err());
        let spec = LossSpec {
            teacher: None,
            ..LossSpec::with_teacher(
                LossKind::SampleReg,
                4,
                Teacher {
                    kind: BaselineKind::Ddim,
                    steps: 3,
                },
            )
        };
        assert!(LossTask::new(spec, cfg, &mix, None).is_err());
        assert!(LossTask::new(LossSpec::hard_label(0), cfg, &mix, Some(&mix)).is_err());
    }

    #[test]
    fn diverging_parameters_report_the_vector() {
        let mix = MixtureModel::symmetric_1d(4.0, 1.0).unwrap();
        let cfg = SolverConfig::new(Mode::P1, 2, ScheduleSpec::ot());
        let task = LossTask::new(LossSpec::hard_label(4), cfg, &mix, Some(&mix)).unwrap();
        let mut p = SolverParams::default_init(2);
        p.pred[0].kappa_u = 1e300;
        match task.loss(&p, 0) {
            Err(Error::Diverged { params, .. }) => assert_eq!(params, p.to_flat()),
            other => panic!("{other:?}"),
        }
    }
}
