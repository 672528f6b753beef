//! Scaling-law model and fit, and finite-horizon associative-memory diagnostics.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod hopfield;
pub mod scaling;

pub use error::{Error, Result};
pub use hopfield::{
    flip_bits, hebbian_store, memory_effectiveness, memory_force, memory_force_with, memory_trial, overlap,
    overlap_trace, random_patterns, read_memory_csv, run_dynamics, transient_recovery, write_memory_csv,
    DynamicsMode, HopfieldModel, MemoryProtocol, MemoryTrial, Recovery, MEMORY_HEADER,
};
pub use scaling::{
    empirical_ratio_trace, excess_loss, fit_power_law, read_scaling_csv, write_scaling_csv, PowerLawFit,
    RatioTrace, ScalingModel, SCALING_HEADER,
};
