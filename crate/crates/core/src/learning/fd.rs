use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

fn check_mask(theta: &[f64], active: Option<&[bool]>) -> Result<()> {
    match active {
        Some(m) if m.len() != theta.len() => Err(Error::LengthMismatch {
            field: "active".into(),
            expected: theta.len(),
            found: m.len(),
        }),
        _ => Ok(()),
    }
}

/// Central differences `(L(theta + h e_j) - L(theta - h e_j)) / 2h` for every
/// active coordinate; inactive coordinates get 0. The loss must be a pure
/// function of `theta` (fix its random inputs beforehand).
pub fn fd_gradient<F>(loss: F, theta: &[f64], h: f64, active: Option<&[bool]>) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Argument(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    check_mask(theta, active)?;
    (0..theta.len())
        .into_par_iter()
        .map(|j| {
            if active.is_some_and(|m| !m[j]) {
                return Ok(0.0);
            }
            let mut probe = theta.to_vec();
            probe[j] = theta[j] + h;
            let up = loss(&probe)?;
            probe[j] = theta[j] - h;
            let down = loss(&probe)?;
            let g = (up - down) / (2.0 * h);
            if g.is_finite() {
                Ok(g)
            } else {
                Err(Error::NonFinite(format!("gradient coordinate {j}")))
            }
        })
        .collect()
}

/// Simultaneous-perturbation estimate averaged over `probes` Rademacher
/// directions, for cross-checking [`fd_gradient`].
pub fn spsa_gradient<F>(
    loss: F,
    theta: &[f64],
    c: f64,
    probes: usize,
    seed: u64,
    active: Option<&[bool]>,
) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    if probes == 0 || !(c > 0.0) {
        return Err(Error::Argument("SPSA needs probes >= 1 and c > 0".into()));
    }
    check_mask(theta, active)?;
    let n = theta.len();
    let estimates: Vec<Vec<f64>> = (0..probes)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let delta: Vec<f64> = (0..n)
                .map(|j| {
                    let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    if active.is_some_and(|m| !m[j]) {
                        0.0
                    } else {
                        s
                    }
                })
                .collect();
            let plus: Vec<f64> = theta.iter().zip(&delta).map(|(t, d)| t + c * d).collect();
            let minus: Vec<f64> = theta.iter().zip(&delta).map(|(t, d)| t - c * d).collect();
            let diff = (loss(&plus)? - loss(&minus)?) / (2.0 * c);
            Ok(delta.iter().map(|d| diff * d).collect())
        })
        .collect::<Result<_>>()?;
    let mut g = vec![0.0; n];
    for e in &estimates {
        for (gj, ej) in g.iter_mut().zip(e) {
            *gj += ej;
        }
    }
    Ok(g.into_iter().map(|v| v / probes as f64).collect())
}
