//! Solver-parameter learning: classification and regression objectives,
//! finite-difference gradients and a decoupled-weight-decay Adam loop.
//!
//! Desk-scale defaults (batch 64 on 1-2D toy models, 2000 iterations) are
//! much smaller than what full image backbones would need.

mod fd;
mod loss;
mod optim;
mod train;

pub use fd::{fd_gradient, spsa_gradient};
pub use loss::{draw_inputs, hard_label_ce, Batch, DrawnInputs, LossKind, LossSpec, LossTask, Teacher};
pub use optim::{optimizer_step, AdamState, OptimConfig};
pub use train::{iteration_seed, train, TraceRow, TrainResult};
