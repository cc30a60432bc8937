//! Reusing learned parameters at a step count nobody trained for, by
//! blending the two neighbouring trained sets.

use crate::error::{Error, Result};
use crate::solver::{RawStep, SolverParams, STEP_FIELDS};

/// Resample `arr` onto `n` evenly spaced positions by linear interpolation.
/// Both endpoints are kept exactly.
pub fn linear_interp(arr: &[f64], n: usize) -> Result<Vec<f64>> {
    let m = arr.len();
    if m < 2 || n < 2 {
        return Err(Error::Argument(format!(
            "linear interpolation needs at least 2 points in and out, got {m} -> {n}"
        )));
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n - 1 {
        let pos = (i * (m - 1)) as f64 / (n - 1) as f64;
        let j = (pos.floor() as usize).min(m - 2);
        let a = pos - j as f64;
        out.push((1.0 - a) * arr[j] + a * arr[j + 1]);
    }
    out.push(arr[m - 1]);
    Ok(out)
}

/// Blend of the two resampled arrays, weighted by where `n` sits between
/// their lengths.
pub fn averaged_interp(f_m: &[f64], f_l: &[f64], n: usize) -> Result<Vec<f64>> {
    let (m, l) = (f_m.len(), f_l.len());
    if !(m < n && n < l) {
        return Err(Error::Argument(format!(
            "averaged interpolation needs M < N < L, got M={m}, N={n}, L={l}"
        )));
    }
    let w_m = (l - n) as f64 / (l - m) as f64;
    let w_l = (n - m) as f64 / (l - m) as f64;
    let a = linear_interp(f_m, n)?;
    let b = linear_interp(f_l, n)?;
    Ok(a.iter().zip(&b).map(|(x, y)| w_m * x + w_l * y).collect())
}

fn column(set: &[RawStep], f: usize) -> Vec<f64> {
    set.iter().map(|s| s.fields()[f]).collect()
}

/// Corrector arrays are one short; repeat their last entry.
fn padded(set: &[RawStep]) -> Result<Vec<RawStep>> {
    let last = *set
        .last()
        .ok_or_else(|| Error::Argument("corrector arrays are empty (need M >= 2)".into()))?;
    let mut out = set.to_vec();
    out.push(last);
    Ok(out)
}

fn blend_sets(a: &[RawStep], b: &[RawStep], n: usize) -> Result<Vec<RawStep>> {
    let mut cols = Vec::with_capacity(STEP_FIELDS);
    for f in 0..STEP_FIELDS {
        cols.push(averaged_interp(&column(a, f), &column(b, f), n)?);
    }
    Ok((0..n)
        .map(|i| RawStep::from_fields(std::array::from_fn(|f| cols[f][i])))
        .collect())
}

/// Parameters for `n` steps from trained sets for `M < n < L` steps. Every
/// array is interpolated independently on its stored (unconstrained) values.
pub fn interp_params(p_m: &SolverParams, p_l: &SolverParams, n: usize) -> Result<SolverParams> {
    p_m.validate(p_m.steps())?;
    p_l.validate(p_l.steps())?;
    let pred = blend_sets(&p_m.pred, &p_l.pred, n)?;
    let mut corr = blend_sets(&padded(&p_m.corr)?, &padded(&p_l.corr)?, n)?;
    corr.truncate(n - 1);
    let raw_steps = averaged_interp(&p_m.raw_steps, &p_l.raw_steps, n)?;
    Ok(SolverParams { pred, corr, raw_steps })
}
