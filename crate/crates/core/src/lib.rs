//! Learned predictor-corrector samplers for diffusion and flow-matching
//! probability-flow ODEs, built on a paired data/noise prediction.

// `!(a > b)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// per-coordinate updates read several parallel arrays by index
#![allow(clippy::needless_range_loop)]
#![cfg_attr(test, allow(clippy::approx_constant))]

pub mod backbone;
pub mod baselines;
pub mod cli;
pub mod dual;
pub mod error;
pub mod interp;
pub mod io;
pub mod learning;
pub mod params_file;
pub mod prediction;
pub mod schedule;
pub mod solver;
pub mod stats;
pub mod svg;
pub mod verify;

pub use error::{Error, Result};
