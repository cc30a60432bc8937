//! Conversions among noise, data and velocity predictions, the paired
//! `(x_pred, eps_pred)` evaluation, and classifier-free guidance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::SchedulePoint;

/// What a backbone natively predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictionKind {
    Noise,
    Data,
    Velocity,
}

/// A backbone evaluation holding both the data and the noise prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct DualEval {
    pub x_pred: Vec<f64>,
    pub eps_pred: Vec<f64>,
    pub t: f64,
    /// Fingerprint of the state the pair was evaluated at.
    pub state_tag: u64,
}

/// FNV-1a over the bit patterns of a state vector.
pub fn state_tag(x: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in x {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

impl DualEval {
    pub fn new(x_pred: Vec<f64>, eps_pred: Vec<f64>, x: &[f64], t: f64) -> Self {
        DualEval {
            x_pred,
            eps_pred,
            t,
            state_tag: state_tag(x),
        }
    }

    pub fn dim(&self) -> usize {
        self.x_pred.len()
    }
}

fn check_dims(raw: &[f64], x: &[f64]) -> Result<()> {
    if raw.len() != x.len() {
        return Err(Error::LengthMismatch {
            field: "prediction".into(),
            expected: x.len(),
            found: raw.len(),
        });
    }
    Ok(())
}

/// Build the dual pair from a raw prediction of the given kind at state `x`.
pub fn to_dual(kind: PredictionKind, raw: &[f64], x: &[f64], point: &SchedulePoint) -> Result<DualEval> {
    check_dims(raw, x)?;
    let SchedulePoint {
        alpha,
        sigma,
        d_alpha,
        d_sigma,
        t,
        ..
    } = *point;
    if !(alpha > 0.0 && sigma > 0.0) {
        return Err(Error::DegenerateSchedule(format!(
            "alpha={alpha}, sigma={sigma} at t={t}"
        )));
    }
    let (x_pred, eps_pred) = match kind {
        PredictionKind::Noise => {
            let x_pred = x.iter().zip(raw).map(|(&xi, &e)| (xi - sigma * e) / alpha).collect();
            (x_pred, raw.to_vec())
        }
        PredictionKind::Data => {
            let eps = x.iter().zip(raw).map(|(&xi, &d)| (xi - alpha * d) / sigma).collect();
            (raw.to_vec(), eps)
        }
        PredictionKind::Velocity => {
            // [alpha sigma; d_alpha d_sigma] [x_pred; eps] = [x; v]
            let det = alpha * d_sigma - sigma * d_alpha;
            if !(det.is_finite() && det.abs() > 1e-300) {
                return Err(Error::DegenerateSchedule(format!(
                    "velocity conversion is singular at t={t} (det={det})"
                )));
            }
            let mut x_pred = Vec::with_capacity(x.len());
            let mut eps = Vec::with_capacity(x.len());
            for (&xi, &v) in x.iter().zip(raw) {
                x_pred.push((d_sigma * xi - sigma * v) / det);
                eps.push((alpha * v - d_alpha * xi) / det);
            }
            (x_pred, eps)
        }
    };
    Ok(DualEval::new(x_pred, eps_pred, x, t))
}

/// The raw prediction of `kind` carried by a dual pair.
pub fn extract(kind: PredictionKind, dual: &DualEval, point: &SchedulePoint) -> Vec<f64> {
    match kind {
        PredictionKind::Noise => dual.eps_pred.clone(),
        PredictionKind::Data => dual.x_pred.clone(),
        PredictionKind::Velocity => velocity_of(dual, point),
    }
}

/// `v = d_alpha * x_pred + d_sigma * eps_pred`.
pub fn velocity_of(dual: &DualEval, point: &SchedulePoint) -> Vec<f64> {
    dual.x_pred
        .iter()
        .zip(&dual.eps_pred)
        .map(|(&d, &e)| point.d_alpha * d + point.d_sigma * e)
        .collect()
}

/// Classifier-free guidance, combined in noise space. The data prediction is
/// rebuilt from the guided noise so the pair stays consistent with `x`.
pub fn apply_guidance(
    cond: &DualEval,
    uncond: &DualEval,
    scale: f64,
    x: &[f64],
    point: &SchedulePoint,
) -> Result<DualEval> {
    if cond.t != uncond.t || cond.state_tag != uncond.state_tag {
        return Err(Error::Usage(format!(
            "guidance pair evaluated at different states (t={} vs t={})",
            cond.t, uncond.t
        )));
    }
    if cond.dim() != uncond.dim() || cond.dim() != x.len() {
        return Err(Error::LengthMismatch {
            field: "guidance".into(),
            expected: x.len(),
            found: cond.dim().min(uncond.dim()),
        });
    }
    if scale == 1.0 {
        return Ok(cond.clone());
    }
    if scale == 0.0 {
        return Ok(uncond.clone());
    }
    let eps: Vec<f64> = cond
        .eps_pred
        .iter()
        .zip(&uncond.eps_pred)
        .map(|(&c, &u)| (1.0 - scale) * u + scale * c)
        .collect();
    let x_pred = x
        .iter()
        .zip(&eps)
        .map(|(&xi, &e)| (xi - point.sigma * e) / point.alpha)
        .collect();
    Ok(DualEval {
        x_pred,
        eps_pred: eps,
        t: cond.t,
        state_tag: cond.state_tag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::ScheduleSpec;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn ot(t: f64) -> SchedulePoint {
        ScheduleSpec::ot().eval(t).unwrap()
    }

    #[test]
    fn noise_zero_gives_scaled_state() {
        let d = to_dual(PredictionKind::Noise, &[0.0], &[1.0], &ot(0.5)).unwrap();
        assert_eq!(d.x_pred, vec![2.0]);
        assert_eq!(d.eps_pred, vec![0.0]);
    }

    #[test]
    fn data_at_pure_signal_has_zero_noise() {
        let p = ScheduleSpec::vp_cosine().eval(0.3).unwrap();
        let x = [0.7, -1.2];
        let raw: Vec<f64> = x.iter().map(|v| v / p.alpha).collect();
        let d = to_dual(PredictionKind::Data, &raw, &x, &p).unwrap();
        for e in d.eps_pred {
            assert_abs_diff_eq!(e, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn velocity_solves_two_by_two() {
        let p = ot(0.5);
        let d = to_dual(PredictionKind::Velocity, &[-2.0], &[1.0], &p).unwrap();
        assert_abs_diff_eq!(d.x_pred[0], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.eps_pred[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(velocity_of(&d, &p)[0], -2.0, epsilon = 1e-15);
    }

    #[test]
    fn singular_velocity_is_rejected() {
        let p = SchedulePoint {
            t: 0.5,
            alpha: 0.5,
            sigma: 0.5,
            d_alpha: 1.0,
            d_sigma: 1.0,
            lambda: 0.0,
            d_lambda: 0.0,
        };
        assert!(matches!(
            to_dual(PredictionKind::Velocity, &[1.0], &[1.0], &p),
            Err(Error::DegenerateSchedule(_))
        ));
    }

    #[test]
    fn velocity_of_examples() {
        let p = ot(0.5);
        let d = DualEval::new(vec![0.0], vec![0.0], &[0.0], 0.5);
        assert_eq!(velocity_of(&d, &p), vec![0.0]);
        let pc = ScheduleSpec::vp_cosine().eval(0.5).unwrap();
        let d = DualEval::new(vec![1.0], vec![1.0], &[1.0], 0.5);
        assert_abs_diff_eq!(velocity_of(&d, &pc)[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(pc.d_alpha, -1.1107207, epsilon = 1e-7);
    }

    #[test]
    fn guidance_identities_and_extrapolation() {
        let p = ot(0.5);
        let x = [1.0];
        let c = to_dual(PredictionKind::Noise, &[1.0], &x, &p).unwrap();
        let u = to_dual(PredictionKind::Noise, &[0.0], &x, &p).unwrap();
        assert_eq!(apply_guidance(&c, &u, 1.0, &x, &p).unwrap(), c);
        assert_eq!(apply_guidance(&c, &u, 0.0, &x, &p).unwrap(), u);
        let g = apply_guidance(&c, &u, 2.0, &x, &p).unwrap();
        assert_abs_diff_eq!(g.eps_pred[0], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g.x_pred[0], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn guidance_rejects_mismatched_states() {
        let p = ot(0.5);
        let c = to_dual(PredictionKind::Noise, &[1.0], &[1.0], &p).unwrap();
        let u = to_dual(PredictionKind::Noise, &[0.0], &[0.9], &p).unwrap();
        assert!(matches!(apply_guidance(&c, &u, 1.5, &[1.0], &p), Err(Error::Usage(_))));
    }

    fn kind() -> impl Strategy<Value = PredictionKind> {
        prop_oneof![
            Just(PredictionKind::Noise),
            Just(PredictionKind::Data),
            Just(PredictionKind::Velocity)
        ]
    }

    proptest! {
        #[test]
        fn roundtrip_and_consistency(
            k in kind(),
            t in 0.05f64..0.95,
            which in 0usize..4,
            raw in prop::collection::vec(-5.0f64..5.0, 3),
            x in prop::collection::vec(-5.0f64..5.0, 3),
        ) {
            let spec = [ScheduleSpec::ot(), ScheduleSpec::vp_cosine(), ScheduleSpec::vp_linear(), ScheduleSpec::ve()][which];
            let p = spec.eval(t).unwrap();
            let d = to_dual(k, &raw, &x, &p).unwrap();
            let back = extract(k, &d, &p);
            let d2 = to_dual(k, &back, &x, &p).unwrap();
            for i in 0..3 {
                let scale = 1.0 + raw[i].abs() + x[i].abs() / p.alpha.min(p.sigma);
                prop_assert!((back[i] - raw[i]).abs() <= 1e-10 * scale);
                prop_assert!((d2.x_pred[i] - d.x_pred[i]).abs() <= 1e-10 * scale);
                let recon = p.alpha * d.x_pred[i] + p.sigma * d.eps_pred[i];
                prop_assert!((recon - x[i]).abs() <= 1e-10 * scale);
            }
        }
    }
}
