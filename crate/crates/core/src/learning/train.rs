use std::time::{Duration, Instant};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backbone::Backbone;
use crate::error::{Error, Result};
use crate::solver::{SolverParams, GAMMA_BOUND};

use super::fd::fd_gradient;
use super::loss::{Batch, LossTask};
use super::optim::{optimizer_step, AdamState, OptimConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub params: SolverParams,
    /// Loss at the start of each iteration, on that iteration's batch.
    pub trace: Vec<TraceRow>,
    pub iterations: usize,
    /// Loss of `init` and of the learned parameters on the iteration-0 batch.
    pub initial_loss: f64,
    pub final_loss: f64,
    pub optim: OptimConfig,
    pub wall_clock: Duration,
}

/// Batch seed for one iteration: stream `iteration` of a generator keyed by
/// the run seed.
pub fn iteration_seed(seed: u64, iteration: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration as u64);
    rng.next_u64()
}

fn at_iteration(e: Error, iteration: usize) -> Error {
    match e {
        Error::Diverged { loss, params, .. } => Error::Diverged {
            iteration,
            loss,
            params,
        },
        other => other,
    }
}

/// Finite-difference AdamW on the flattened parameters. Each iteration draws
/// a fresh batch; both sides of every difference reuse it. Coordinates the
/// mode ignores stay frozen, and gamma is clamped to the admissible range
/// after every update.
pub fn train<B: Backbone + ?Sized>(
    task: &LossTask<'_, B>,
    optim: &OptimConfig,
    init: &SolverParams,
) -> Result<TrainResult> {
    let start = Instant::now();
    optim.validate()?;
    task.validate()?;
    let m = task.config.steps;
    init.validate(m)?;

    let active = SolverParams::active_mask(m, task.config.mode);
    let decay: Vec<bool> = SolverParams::decay_mask(m)
        .iter()
        .zip(&active)
        .map(|(d, a)| *d && *a)
        .collect();
    let gammas = SolverParams::gamma_indices(m);

    let reference = task.draw(iteration_seed(optim.seed, 0))?;
    let loss_of = |theta: &[f64], batch: &Batch| -> Result<f64> {
        let p = SolverParams::from_flat(m, theta)?;
        task.loss_on(&p, batch)
    };

    let mut theta = init.to_flat();
    let initial_loss = loss_of(&theta, &reference).map_err(|e| at_iteration(e, 0))?;
    let mut state = AdamState::new(theta.len());
    let mut trace = Vec::with_capacity(optim.total_steps);

    for it in 0..optim.total_steps {
        let fresh;
        let batch = if it == 0 {
            &reference
        } else {
            fresh = task.draw(iteration_seed(optim.seed, it))?;
            &fresh
        };
        let loss = loss_of(&theta, batch).map_err(|e| at_iteration(e, it))?;
        let grad = fd_gradient(|t| loss_of(t, batch), &theta, optim.fd_h, Some(&active)).map_err(|e| match e {
            Error::NonFinite(what) => {
                let j = what.rsplit(' ').next().and_then(|s| s.parse().ok());
                let name = j.map(|j| SolverParams::coordinate_name(m, j)).unwrap_or(what);
                Error::NonFinite(format!("gradient of {name} at iteration {it}"))
            }
            other => at_iteration(other, it),
        })?;
        let lr = optim.lr(it);
        let (next_state, mut next) = optimizer_step(&state, &grad, &theta, it, optim, &decay)?;
        for &g in &gammas {
            next[g] = next[g].clamp(-GAMMA_BOUND, GAMMA_BOUND);
        }
        state = next_state;
        theta = next;
        trace.push(TraceRow {
            iteration: it,
            loss,
            lr,
        });
    }

    let params = SolverParams::from_flat(m, &theta)?;
    let final_loss = if optim.total_steps == 0 {
        initial_loss
    } else {
        loss_of(&theta, &reference).map_err(|e| at_iteration(e, optim.total_steps))?
    };
    Ok(TrainResult {
        params,
        iterations: trace.len(),
        trace,
        initial_loss,
        final_loss,
        optim: *optim,
        wall_clock: start.elapsed(),
    })
}
