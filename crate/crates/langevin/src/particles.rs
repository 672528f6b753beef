//! Euler-Maruyama particle ensembles.

use hclm_core::numerics::rng;

use crate::error::{Error, Result};
use crate::grid::{free_energy, DensityGrid};
use crate::potential::{Potential, Quadratic};

const LANGEVIN_STREAM: u64 = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct ParticleEnsemble {
    /// `N x d`, row-major.
    pub positions: Vec<f64>,
    pub dim: usize,
    pub beta: f64,
    pub time: f64,
}

impl ParticleEnsemble {
    pub fn new(positions: Vec<f64>, dim: usize, beta: f64) -> Result<Self> {
        if dim == 0 || positions.is_empty() || !positions.len().is_multiple_of(dim) {
            return Err(Error::config(format!(
                "{} coordinates do not form a nonempty ensemble in dimension {dim}",
                positions.len()
            )));
        }
        if !(beta >= 0.0) {
            return Err(Error::config(format!("beta must be >= 0, got {beta}")));
        }
        if positions.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("particle positions must be finite"));
        }
        Ok(Self {
            positions,
            dim,
            beta,
            time: 0.0,
        })
    }

    /// `n` particles all at `x0`.
    pub fn at(n: usize, x0: &[f64], beta: f64) -> Result<Self> {
        Self::new(x0.repeat(n), x0.len(), beta)
    }

    pub fn len(&self) -> usize {
        self.positions.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Per-coordinate sample mean and variance (`n - 1` denominator).
    pub fn moments(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.len() as f64;
        let mut mean = vec![0.0; self.dim];
        for p in self.positions.chunks(self.dim) {
            mean.iter_mut().zip(p).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; self.dim];
        for p in self.positions.chunks(self.dim) {
            for ((s, v), m) in var.iter_mut().zip(p).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= (n - 1.0).max(1.0));
        (mean, var)
    }
}

fn advance<P: Potential + ?Sized>(
    ens: &mut ParticleEnsemble,
    pot: &P,
    dt: f64,
    steps: usize,
    r: &mut rng::Rng,
) -> Result<()> {
    if !(dt > 0.0) {
        return Err(Error::config(format!("dt must be > 0, got {dt}")));
    }
    let amp = (2.0 * ens.beta * dt).sqrt();
    let d = ens.dim;
    let mut grad = vec![0.0; d];
    for _ in 0..steps {
        for p in ens.positions.chunks_mut(d) {
            pot.grad(p, &mut grad);
            for (x, g) in p.iter_mut().zip(&grad) {
                *x -= g * dt;
                if amp > 0.0 {
                    *x += amp * rng::standard_normal(r);
                }
            }
        }
        ens.time += dt;
        if ens.positions.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { time: ens.time, dt });
        }
    }
    Ok(())
}

/// One step `theta - grad U dt + sqrt(2 beta dt) xi`.
pub fn langevin_step<P: Potential + ?Sized>(
    ens: &ParticleEnsemble,
    pot: &P,
    dt: f64,
    seed: u64,
) -> Result<ParticleEnsemble> {
    let mut out = ens.clone();
    advance(&mut out, pot, dt, 1, &mut rng::stream(seed, LANGEVIN_STREAM))?;
    Ok(out)
}

/// `steps` steps in place, drawing from one stream; a single step equals
/// [`langevin_step`] with the same seed.
pub fn run_langevin<P: Potential + ?Sized>(
    ens: &mut ParticleEnsemble,
    pot: &P,
    dt: f64,
    steps: usize,
    seed: u64,
) -> Result<()> {
    advance(ens, pot, dt, steps, &mut rng::stream(seed, LANGEVIN_STREAM))
}

/// Histogram density of a 1-D ensemble on the grid's cells. Particles outside
/// `[lo, hi)` are dropped, so the mass can fall short of one.
pub fn histogram(ens: &ParticleEnsemble, lo: f64, hi: f64, m: usize) -> Result<DensityGrid> {
    if ens.dim != 1 {
        return Err(Error::config(format!("histograms need a 1-D ensemble, got dimension {}", ens.dim)));
    }
    let mut grid = DensityGrid::uniform(lo, hi, m)?;
    let dx = grid.dx();
    grid.rho.iter_mut().for_each(|r| *r = 0.0);
    let w = 1.0 / (ens.len() as f64 * dx);
    let mut dropped = 0usize;
    for &x in &ens.positions {
        let k = ((x - lo) / dx).floor();
        if k >= 0.0 && (k as usize) < m {
            grid.rho[k as usize] += w;
        } else {
            dropped += 1;
        }
    }
    if dropped > 0 {
        log::warn!("{dropped} particles fell outside [{lo}, {hi}) and were left out of the histogram");
    }
    Ok(grid)
}

/// Free energy of the histogram density on `m` cells over `[lo, hi)`.
pub fn free_energy_particles<P: Potential + ?Sized>(
    ens: &ParticleEnsemble,
    pot: &P,
    beta: f64,
    lo: f64,
    hi: f64,
    m: usize,
) -> Result<f64> {
    if ens.len() < 100 {
        return Err(Error::config(format!(
            "the histogram estimator needs at least 100 particles, got {}",
            ens.len()
        )));
    }
    Ok(free_energy(&histogram(ens, lo, hi, m)?, pot, beta))
}

/// Sample variance of `n` particles started at 0 in `U = x^2/2` after
/// `burn_in` steps of size `dt`.
pub fn stationary_variance_check(beta: f64, dt: f64, burn_in: usize, n: usize, seed: u64) -> Result<f64> {
    if n < 2 {
        return Err(Error::config("need at least 2 particles"));
    }
    let mut ens = ParticleEnsemble::at(n, &[0.0], beta)?;
    run_langevin(&mut ens, &Quadratic { stiffness: 1.0 }, dt, burn_in, seed)?;
    Ok(ens.moments().1[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::DoubleWell;

    #[test]
    fn zero_temperature_is_gradient_descent() {
        let ens = ParticleEnsemble::new(vec![1.0, -2.0, 0.5], 1, 0.0).unwrap();
        let dt = 1e-3;
        let next = langevin_step(&ens, &Quadratic::default(), dt, 0).unwrap();
        for (a, b) in next.positions.iter().zip(&ens.positions) {
            assert_eq!(*a, b * (1.0 - dt));
        }
        assert_eq!(next.time, dt);
    }

    #[test]
    fn flat_potential_increment_variance() {
        let flat = Quadratic { stiffness: 0.0 };
        let (beta, dt, n) = (0.7, 0.01, 100_000);
        let ens = ParticleEnsemble::at(n, &[0.0], beta).unwrap();
        let next = langevin_step(&ens, &flat, dt, 11).unwrap();
        let var = next.moments().1[0];
        let expected = 2.0 * beta * dt;
        // standard error of a sample variance is expected * sqrt(2/n)
        assert!((var - expected).abs() < 5.0 * expected * (2.0 / n as f64).sqrt(), "{var}");
    }

    #[test]
    fn seeded_runs_repeat() {
        let pot = DoubleWell::default();
        let mut a = ParticleEnsemble::at(50, &[0.3, -0.2], 0.4).unwrap();
        let mut b = a.clone();
        run_langevin(&mut a, &pot, 1e-3, 20, 9).unwrap();
        run_langevin(&mut b, &pot, 1e-3, 20, 9).unwrap();
        assert_eq!(a, b);
        let one = langevin_step(&ParticleEnsemble::at(5, &[0.1], 0.4).unwrap(), &pot, 1e-3, 3).unwrap();
        let mut same = ParticleEnsemble::at(5, &[0.1], 0.4).unwrap();
        run_langevin(&mut same, &pot, 1e-3, 1, 3).unwrap();
        assert_eq!(one, same);
    }

    #[test]
    fn blow_up_is_reported() {
        let stiff = Quadratic { stiffness: 1e3 };
        let mut ens = ParticleEnsemble::at(4, &[1.0], 0.0).unwrap();
        let err = run_langevin(&mut ens, &stiff, 1.0, 500, 0).unwrap_err();
        assert!(matches!(err, Error::BlowUp { .. }), "{err}");
    }

    #[test]
    fn histogram_counts_and_drops() {
        let ens = ParticleEnsemble::new(vec![0.1, 0.2, 0.7, 5.0], 1, 1.0).unwrap();
        let g = histogram(&ens, 0.0, 1.0, 2).unwrap();
        assert_eq!(g.rho, vec![1.0, 0.5]);
        assert!((g.mass() - 0.75).abs() < 1e-15);
    }
}
