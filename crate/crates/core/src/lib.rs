//! Entropy-regulated learning dynamics: differentiable entropy surrogates,
//! information-force diagnostics, and the adaptive-coefficient training loop.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod error;
pub mod models;
pub mod numerics;
pub mod surrogates;
pub mod thermostat;

pub use error::{Error, Result};
