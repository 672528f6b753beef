//! Overdamped Langevin dynamics `d theta = -grad U dt + sqrt(2 beta) dW` as a
//! particle ensemble, and the matching Fokker-Planck equation on a 1-D grid.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod grid;
pub mod particles;
pub mod potential;

pub use error::{Error, Result};
pub use grid::{
    dissipation_check, entropy, entropy_production_terms, fp_run, fp_step, free_energy, stability_limit,
    write_run_csv, DensityGrid, DissipationReport, FpRow, FP_RUN_HEADER,
};
pub use particles::{
    free_energy_particles, histogram, langevin_step, run_langevin, stationary_variance_check, ParticleEnsemble,
};
pub use potential::{DoubleWell, Potential, PotentialSpec, Quadratic};
