//! Closed-form toy backbones: a diagonal Gaussian and an isotropic Gaussian
//! mixture whose components double as class labels. Both provide exact
//! posterior predictions, a Bayes classifier (mixture only) and trajectory
//! oracles for the probability-flow ODE.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prediction::DualEval;
use crate::schedule::{SchedulePoint, ScheduleSpec};

/// Anything that maps a noisy state to a consistent `(x_pred, eps_pred)` pair.
pub trait Backbone: Sync {
    fn dim(&self) -> usize;

    /// Number of class labels accepted as `cond`; zero for unconditional models.
    fn num_classes(&self) -> usize {
        0
    }

    fn evaluate(&self, x: &[f64], point: &SchedulePoint, cond: Option<usize>) -> Result<DualEval>;
}

/// Exact (or high-accuracy) transport along the probability-flow ODE.
pub trait FlowOracle {
    fn flow(&self, schedule: &ScheduleSpec, x: &[f64], t_from: f64, t_to: f64, cond: Option<usize>)
        -> Result<Vec<f64>>;
}

/// Class log-probabilities of a clean sample (up to an additive constant).
pub trait Classifier: Sync {
    fn log_posterior(&self, x0: &[f64]) -> Result<Vec<f64>>;

    fn posterior(&self, x0: &[f64]) -> Result<Vec<f64>> {
        let lp = self.log_posterior(x0)?;
        let m = lp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = lp.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = w.iter().sum();
        Ok(w.into_iter().map(|v| v / z).collect())
    }
}

fn check_dim(x: &[f64], dim: usize) -> Result<()> {
    if x.len() != dim {
        return Err(Error::LengthMismatch {
            field: "state".into(),
            expected: dim,
            found: x.len(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianModel {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl GaussianModel {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        let m = GaussianModel { mean, std };
        m.validate()?;
        Ok(m)
    }

    pub fn isotropic(mean: Vec<f64>, std: f64) -> Result<Self> {
        let d = mean.len();
        Self::new(mean, vec![std; d])
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.is_empty() || self.mean.len() != self.std.len() {
            return Err(Error::LengthMismatch {
                field: "std".into(),
                expected: self.mean.len(),
                found: self.std.len(),
            });
        }
        if self.mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mean".into()));
        }
        if !self.std.iter().all(|s| *s > 0.0 && s.is_finite()) {
            return Err(Error::Argument("gaussian std must be positive".into()));
        }
        Ok(())
    }
}

/// Exact posterior pair of a diagonal Gaussian. Both members are computed
/// from their own closed forms rather than one from the other.
pub fn gaussian_dual(model: &GaussianModel, x: &[f64], point: &SchedulePoint) -> Result<DualEval> {
    check_dim(x, model.mean.len())?;
    let (a, s) = (point.alpha, point.sigma);
    let mut x_pred = Vec::with_capacity(x.len());
    let mut eps = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        let (mu, sd2) = (model.mean[k], model.std[k] * model.std[k]);
        let var = a * a * sd2 + s * s;
        eps.push(s * (x[k] - a * mu) / var);
        x_pred.push((a * sd2 * x[k] + s * s * mu) / var);
    }
    Ok(DualEval::new(x_pred, eps, x, point.t))
}

/// `sigma_tilde = sqrt(alpha^2 s^2 + sigma^2)`, the marginal std.
fn marginal_std((alpha, sigma): (f64, f64), sd: f64) -> f64 {
    (alpha * alpha * sd * sd + sigma * sigma).sqrt()
}

fn gaussian_flow(model: &GaussianModel, from: (f64, f64), to: (f64, f64), x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|k| {
            let (mu, sd) = (model.mean[k], model.std[k]);
            let ratio = marginal_std(to, sd) / marginal_std(from, sd);
            to.0 * mu + ratio * (x[k] - from.0 * mu)
        })
        .collect()
}

impl Backbone for GaussianModel {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn evaluate(&self, x: &[f64], point: &SchedulePoint, cond: Option<usize>) -> Result<DualEval> {
        if let Some(c) = cond {
            return Err(Error::Usage(format!(
                "gaussian backbone is unconditional (got class {c})"
            )));
        }
        gaussian_dual(self, x, point)
    }
}

impl FlowOracle for GaussianModel {
    fn flow(
        &self,
        schedule: &ScheduleSpec,
        x: &[f64],
        t_from: f64,
        t_to: f64,
        _cond: Option<usize>,
    ) -> Result<Vec<f64>> {
        check_dim(x, self.dim())?;
        let (from, to) = (schedule.rates(t_from)?, schedule.rates(t_to)?);
        Ok(gaussian_flow(self, from, to, x))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureModel {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub std: f64,
}

impl MixtureModel {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, std: f64) -> Result<Self> {
        let m = MixtureModel { weights, means, std };
        m.validate()?;
        Ok(m)
    }

    /// Equal-weight 1D mixture at `-mu` and `+mu`.
    pub fn symmetric_1d(mu: f64, std: f64) -> Result<Self> {
        Self::new(vec![0.5, 0.5], vec![vec![-mu], vec![mu]], std)
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.is_empty() || self.weights.len() != self.means.len() {
            return Err(Error::LengthMismatch {
                field: "means".into(),
                expected: self.weights.len(),
                found: self.means.len(),
            });
        }
        let d = self.means[0].len();
        if d == 0 {
            return Err(Error::Argument("mixture means must be non-empty".into()));
        }
        for (k, m) in self.means.iter().enumerate() {
            if m.len() != d {
                return Err(Error::LengthMismatch {
                    field: format!("means[{k}]"),
                    expected: d,
                    found: m.len(),
                });
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("means[{k}]")));
            }
        }
        if !self.weights.iter().all(|w| *w > 0.0 && w.is_finite()) {
            return Err(Error::Argument("mixture weights must be positive".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Argument(format!("mixture weights sum to {total}, not 1")));
        }
        if !(self.std > 0.0 && self.std.is_finite()) {
            return Err(Error::Argument("mixture std must be positive".into()));
        }
        Ok(())
    }

    pub fn component(&self, k: usize) -> Result<GaussianModel> {
        let mean = self
            .means
            .get(k)
            .ok_or_else(|| Error::Argument(format!("class {k} out of range")))?;
        GaussianModel::isotropic(mean.clone(), self.std)
    }

    /// Posterior responsibilities of each component given `x` at `point`.
    pub fn responsibilities(&self, x: &[f64], point: &SchedulePoint) -> Vec<f64> {
        let var = point.alpha * point.alpha * self.std * self.std + point.sigma * point.sigma;
        let logits: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.means)
            .map(|(w, m)| {
                let d2: f64 = x.iter().zip(m).map(|(xi, mi)| (xi - point.alpha * mi).powi(2)).sum();
                w.ln() - 0.5 * d2 / var
            })
            .collect();
        softmax(&logits)
    }

    /// Draw one clean sample and its component label.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, usize) {
        use rand_distr::{Distribution, StandardNormal};
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = self.weights.len() - 1;
        for (j, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = j;
                break;
            }
        }
        let x = self.means[k]
            .iter()
            .map(|m| {
                let z: f64 = StandardNormal.sample(rng);
                m + self.std * z
            })
            .collect();
        (x, k)
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|v| v / z).collect()
}

/// Posterior-weighted combination of the per-component Gaussian pairs, or
/// the single component `cond` when conditioning.
pub fn mixture_dual(model: &MixtureModel, x: &[f64], point: &SchedulePoint, cond: Option<usize>) -> Result<DualEval> {
    check_dim(x, model.means[0].len())?;
    if let Some(k) = cond {
        return gaussian_dual(&model.component(k)?, x, point);
    }
    let r = model.responsibilities(x, point);
    let mut x_pred = vec![0.0; x.len()];
    let mut eps = vec![0.0; x.len()];
    for (rk, mean) in r.iter().zip(&model.means) {
        let comp = GaussianModel::isotropic(mean.clone(), model.std)?;
        let ev = gaussian_dual(&comp, x, point)?;
        for j in 0..x.len() {
            x_pred[j] += rk * ev.x_pred[j];
            eps[j] += rk * ev.eps_pred[j];
        }
    }
    Ok(DualEval::new(x_pred, eps, x, point.t))
}

/// Class posterior of a clean sample under the mixture.
pub fn bayes_posterior(model: &MixtureModel, x0: &[f64]) -> Result<Vec<f64>> {
    Ok(softmax(&bayes_log_posterior(model, x0)?))
}

/// Unnormalized class log-probabilities `log w_k - |x0 - mu_k|^2 / (2 s^2)`.
pub fn bayes_log_posterior(model: &MixtureModel, x0: &[f64]) -> Result<Vec<f64>> {
    check_dim(x0, model.means[0].len())?;
    let s2 = model.std * model.std;
    Ok(model
        .weights
        .iter()
        .zip(&model.means)
        .map(|(w, m)| {
            let d2: f64 = x0.iter().zip(m).map(|(a, b)| (a - b).powi(2)).sum();
            w.ln() - 0.5 * d2 / s2
        })
        .collect())
}

impl Backbone for MixtureModel {
    fn dim(&self) -> usize {
        self.means[0].len()
    }

    fn num_classes(&self) -> usize {
        self.weights.len()
    }

    fn evaluate(&self, x: &[f64], point: &SchedulePoint, cond: Option<usize>) -> Result<DualEval> {
        mixture_dual(self, x, point, cond)
    }
}

impl Classifier for MixtureModel {
    fn log_posterior(&self, x0: &[f64]) -> Result<Vec<f64>> {
        bayes_log_posterior(self, x0)
    }
}

pub const RK4_MIN_STEPS: usize = 20_000;
const RK4_TOL: f64 = 1e-9;
const RK4_MAX_HALVINGS: usize = 6;

/// Classical RK4 on `dx/dt = alpha' x_pred + sigma' eps_pred` with uniform steps.
pub fn rk4_flow<B: Backbone + ?Sized>(
    backbone: &B,
    schedule: &ScheduleSpec,
    x: &[f64],
    t_from: f64,
    t_to: f64,
    cond: Option<usize>,
    steps: usize,
) -> Result<Vec<f64>> {
    let h = (t_to - t_from) / steps as f64;
    let vel = |y: &[f64], t: f64| -> Result<Vec<f64>> {
        let p = schedule.eval(t)?;
        let ev = backbone.evaluate(y, &p, cond)?;
        Ok(ev
            .x_pred
            .iter()
            .zip(&ev.eps_pred)
            .map(|(d, e)| p.d_alpha * d + p.d_sigma * e)
            .collect())
    };
    let axpy = |y: &[f64], k: &[f64], c: f64| -> Vec<f64> { y.iter().zip(k).map(|(a, b)| a + c * b).collect() };
    let mut y = x.to_vec();
    for n in 0..steps {
        let t = t_from + h * n as f64;
        // keep the last stage exactly on the endpoint
        let t_next = if n + 1 == steps { t_to } else { t + h };
        let t_mid = 0.5 * (t + t_next);
        let k1 = vel(&y, t)?;
        let k2 = vel(&axpy(&y, &k1, 0.5 * h), t_mid)?;
        let k3 = vel(&axpy(&y, &k2, 0.5 * h), t_mid)?;
        let k4 = vel(&axpy(&y, &k3, h), t_next)?;
        for j in 0..y.len() {
            y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Oracle("RK4 produced a non-finite state".into()));
    }
    Ok(y)
}

impl FlowOracle for MixtureModel {
    fn flow(
        &self,
        schedule: &ScheduleSpec,
        x: &[f64],
        t_from: f64,
        t_to: f64,
        cond: Option<usize>,
    ) -> Result<Vec<f64>> {
        check_dim(x, self.dim())?;
        if let Some(k) = cond {
            return self.component(k)?.flow(schedule, x, t_from, t_to, None);
        }
        schedule.eval(t_from)?;
        schedule.eval(t_to)?;
        let mut steps = RK4_MIN_STEPS;
        let mut prev = rk4_flow(self, schedule, x, t_from, t_to, None, steps)?;
        for _ in 0..RK4_MAX_HALVINGS {
            steps *= 2;
            let next = rk4_flow(self, schedule, x, t_from, t_to, None, steps)?;
            let diff = prev.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if diff < RK4_TOL {
                return Ok(next);
            }
            prev = next;
        }
        Err(Error::Oracle(format!(
            "RK4 did not settle below {RK4_TOL} with {steps} steps"
        )))
    }
}

/// Serializable choice of analytic backbone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AnalyticModel {
    Gaussian(GaussianModel),
    Mixture(MixtureModel),
}

impl AnalyticModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            AnalyticModel::Gaussian(g) => g.validate(),
            AnalyticModel::Mixture(m) => m.validate(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: AnalyticModel = serde_json::from_str(text).map_err(|e| Error::Parse(format!("backbone: {e}")))?;
        m.validate()?;
        Ok(m)
    }

    pub fn as_mixture(&self) -> Option<&MixtureModel> {
        match self {
            AnalyticModel::Mixture(m) => Some(m),
            AnalyticModel::Gaussian(_) => None,
        }
    }
}

impl Backbone for AnalyticModel {
    fn dim(&self) -> usize {
        match self {
            AnalyticModel::Gaussian(g) => g.dim(),
            AnalyticModel::Mixture(m) => m.dim(),
        }
    }

    fn num_classes(&self) -> usize {
        match self {
            AnalyticModel::Gaussian(g) => g.num_classes(),
            AnalyticModel::Mixture(m) => m.num_classes(),
        }
    }

    fn evaluate(&self, x: &[f64], point: &SchedulePoint, cond: Option<usize>) -> Result<DualEval> {
        match self {
            AnalyticModel::Gaussian(g) => g.evaluate(x, point, cond),
            AnalyticModel::Mixture(m) => m.evaluate(x, point, cond),
        }
    }
}

impl FlowOracle for AnalyticModel {
    fn flow(
        &self,
        schedule: &ScheduleSpec,
        x: &[f64],
        t_from: f64,
        t_to: f64,
        cond: Option<usize>,
    ) -> Result<Vec<f64>> {
        match self {
            AnalyticModel::Gaussian(g) => g.flow(schedule, x, t_from, t_to, cond),
            AnalyticModel::Mixture(m) => m.flow(schedule, x, t_from, t_to, cond),
        }
    }
}
