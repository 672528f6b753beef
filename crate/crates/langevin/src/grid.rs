//! Finite-volume Fokker-Planck solver on a 1-D grid with reflecting walls.
//!
//! Interface fluxes use the square-root approximation
//! `J = (beta/dx) (e^{-dU/2beta} rho_i - e^{dU/2beta} rho_{i+1})`, which is
//! consistent with `-(rho U' + beta rho')` and vanishes exactly on the
//! discrete Gibbs density `rho_i ~ exp(-U_i/beta)`.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::potential::Potential;

/// Cells with density at or below this are skipped by log-density terms.
pub const RHO_FLOOR: f64 = 1e-300;

#[derive(Clone, Debug, PartialEq)]
pub struct DensityGrid {
    pub lo: f64,
    pub hi: f64,
    pub rho: Vec<f64>,
}

impl DensityGrid {
    /// Normalizes `rho` to unit mass.
    pub fn new(lo: f64, hi: f64, rho: Vec<f64>) -> Result<Self> {
        if !(hi > lo) || rho.is_empty() {
            return Err(Error::config(format!(
                "grid needs lo < hi and at least one cell, got [{lo}, {hi}] with {} cells",
                rho.len()
            )));
        }
        if rho.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
            return Err(Error::config("density must be finite and nonnegative"));
        }
        let mut g = Self { lo, hi, rho };
        let mass = g.mass();
        if !(mass > 0.0) {
            return Err(Error::config("density has zero mass"));
        }
        g.rho.iter_mut().for_each(|r| *r /= mass);
        Ok(g)
    }

    pub fn uniform(lo: f64, hi: f64, m: usize) -> Result<Self> {
        Self::new(lo, hi, vec![1.0; m])
    }

    /// Density proportional to `f` sampled at cell centers.
    pub fn from_fn(lo: f64, hi: f64, m: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let dx = (hi - lo) / m as f64;
        Self::new(lo, hi, (0..m).map(|i| f(lo + (i as f64 + 0.5) * dx)).collect())
    }

    /// Discrete stationary density `exp(-U/beta) / Z`.
    pub fn gibbs<P: Potential + ?Sized>(lo: f64, hi: f64, m: usize, pot: &P, beta: f64) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(Error::config(format!("Gibbs density needs beta > 0, got {beta}")));
        }
        let dx = (hi - lo) / m as f64;
        let u: Vec<f64> = (0..m).map(|i| pot.value1(lo + (i as f64 + 0.5) * dx)).collect();
        let umin = u.iter().copied().fold(f64::INFINITY, f64::min);
        Self::new(lo, hi, u.iter().map(|v| (-(v - umin) / beta).exp()).collect())
    }

    /// All mass in one cell.
    pub fn point_mass(lo: f64, hi: f64, m: usize, cell: usize) -> Result<Self> {
        if cell >= m {
            return Err(Error::config(format!("cell {cell} outside a grid of {m} cells")));
        }
        let mut rho = vec![0.0; m];
        rho[cell] = 1.0;
        Self::new(lo, hi, rho)
    }

    pub fn m(&self) -> usize {
        self.rho.len()
    }

    pub fn dx(&self) -> f64 {
        (self.hi - self.lo) / self.m() as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.dx()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.m()).map(|i| self.center(i)).collect()
    }

    pub fn mass(&self) -> f64 {
        self.rho.iter().sum::<f64>() * self.dx()
    }

    /// `theta,rho` pairs.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "theta,rho")?;
        for (x, r) in self.centers().iter().zip(&self.rho) {
            writeln!(w, "{x:.16e},{r:.16e}")?;
        }
        Ok(())
    }
}

/// Interface transfer rates, fixed for a grid geometry, potential and beta.
struct Operator {
    /// `beta/dx * e^{-dU/2beta}` across interface `i | i+1`.
    fwd: Vec<f64>,
    /// `beta/dx * e^{+dU/2beta}`.
    bwd: Vec<f64>,
}

impl Operator {
    fn new<P: Potential + ?Sized>(grid: &DensityGrid, pot: &P, beta: f64) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(Error::config(format!("the Fokker-Planck solver needs beta > 0, got {beta}")));
        }
        let dx = grid.dx();
        let u: Vec<f64> = grid.centers().iter().map(|&x| pot.value1(x)).collect();
        let (fwd, bwd) = u
            .windows(2)
            .map(|w| {
                let half = (w[1] - w[0]) / (2.0 * beta);
                (beta / dx * (-half).exp(), beta / dx * half.exp())
            })
            .unzip();
        Ok(Self { fwd, bwd })
    }

    /// Largest dt keeping every explicit update a convex combination.
    fn positivity_limit(&self, dx: f64) -> f64 {
        let m = self.fwd.len() + 1;
        let worst = (0..m)
            .map(|i| {
                let right = if i + 1 < m { self.fwd[i] } else { 0.0 };
                let left = if i > 0 { self.bwd[i - 1] } else { 0.0 };
                right + left
            })
            .fold(0.0, f64::max);
        if worst > 0.0 {
            dx / worst
        } else {
            f64::INFINITY
        }
    }

    fn apply(&self, rho: &mut [f64], flux: &mut Vec<f64>, dt: f64, dx: f64) {
        flux.clear();
        flux.extend((0..self.fwd.len()).map(|i| self.fwd[i] * rho[i] - self.bwd[i] * rho[i + 1]));
        let c = dt / dx;
        for (i, j) in flux.iter().enumerate() {
            rho[i] -= c * j;
            rho[i + 1] += c * j;
        }
    }
}

/// `min(dx^2 / (2 beta + dx max|U'|), positivity bound of the flux form)`.
pub fn stability_limit<P: Potential + ?Sized>(grid: &DensityGrid, pot: &P, beta: f64) -> Result<f64> {
    let op = Operator::new(grid, pot, beta)?;
    let dx = grid.dx();
    let max_grad = grid
        .centers()
        .iter()
        .map(|&x| pot.grad1(x).abs())
        .fold(0.0, f64::max);
    Ok((dx * dx / (2.0 * beta + dx * max_grad)).min(op.positivity_limit(dx)))
}

fn clip_negative(rho: &mut [f64], target_mass: f64, dx: f64) {
    if rho.iter().all(|r| *r >= 0.0) {
        return;
    }
    let worst = rho.iter().copied().fold(0.0, f64::min);
    log::warn!("clipping negative density (min {worst:e}) and renormalizing");
    rho.iter_mut().for_each(|r| *r = r.max(0.0));
    let mass = rho.iter().sum::<f64>() * dx;
    if mass > 0.0 {
        rho.iter_mut().for_each(|r| *r *= target_mass / mass);
    }
}

/// One explicit Euler step of `d rho/dt = (rho U')' + beta rho''` with no-flux walls.
pub fn fp_step<P: Potential + ?Sized>(grid: &DensityGrid, pot: &P, beta: f64, dt: f64) -> Result<DensityGrid> {
    let limit = stability_limit(grid, pot, beta)?;
    if !(dt > 0.0) || dt > limit {
        return Err(Error::Unstable { dt, limit });
    }
    let op = Operator::new(grid, pot, beta)?;
    let mut out = grid.clone();
    let mass = grid.mass();
    op.apply(&mut out.rho, &mut Vec::new(), dt, grid.dx());
    clip_negative(&mut out.rho, mass, grid.dx());
    Ok(out)
}

/// `sum (U rho + beta rho log rho) dx`, with `0 log 0 = 0`.
pub fn free_energy<P: Potential + ?Sized>(grid: &DensityGrid, pot: &P, beta: f64) -> f64 {
    let dx = grid.dx();
    grid.rho
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let ent = if r > 0.0 { beta * r * r.ln() } else { 0.0 };
            pot.value1(grid.center(i)) * r + ent
        })
        .sum::<f64>()
        * dx
}

/// Differential entropy `-sum rho log rho dx`.
pub fn entropy(grid: &DensityGrid) -> f64 {
    -grid.rho.iter().filter(|r| **r > 0.0).map(|r| r * r.ln()).sum::<f64>() * grid.dx()
}

/// `(-sum rho U'' dx, beta sum rho (d log rho)^2 dx)`; the log-derivative is
/// a centered difference over interior cells.
pub fn entropy_production_terms<P: Potential + ?Sized>(grid: &DensityGrid, pot: &P, beta: f64) -> (f64, f64) {
    let dx = grid.dx();
    let rho = &grid.rho;
    let drift = -rho
        .iter()
        .enumerate()
        .filter(|(_, r)| **r > RHO_FLOOR)
        .map(|(i, r)| r * pot.laplacian(&[grid.center(i)]))
        .sum::<f64>()
        * dx;
    if beta == 0.0 {
        return (drift, 0.0);
    }
    let diffusion = rho
        .windows(3)
        .filter(|w| w.iter().all(|r| *r > RHO_FLOOR))
        .map(|w| {
            let d = (w[2].ln() - w[0].ln()) / (2.0 * dx);
            w[1] * d * d
        })
        .sum::<f64>()
        * beta
        * dx;
    (drift, diffusion)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DissipationReport {
    /// `max_t E(rho_{t+1}) - E(rho_t)`; negative when strictly decreasing.
    pub max_uphill: f64,
    pub worst_step: Option<usize>,
}

impl DissipationReport {
    pub fn from_energies(energies: &[f64]) -> Self {
        let mut max_uphill = f64::NEG_INFINITY;
        let mut worst_step = None;
        for (t, w) in energies.windows(2).enumerate() {
            if w[1] - w[0] > max_uphill {
                max_uphill = w[1] - w[0];
                worst_step = Some(t);
            }
        }
        Self { max_uphill, worst_step }
    }

    /// Within `1e-8 + 1e-4 dt` of monotone.
    pub fn passes(&self, dt: f64) -> bool {
        self.max_uphill <= 1e-8 + 1e-4 * dt
    }
}

pub fn dissipation_check<P: Potential + ?Sized>(history: &[DensityGrid], pot: &P, beta: f64) -> DissipationReport {
    let e: Vec<f64> = history.iter().map(|g| free_energy(g, pot, beta)).collect();
    DissipationReport::from_energies(&e)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FpRow {
    pub t: f64,
    pub free_energy: f64,
    pub entropy: f64,
    pub drift_term: f64,
    pub diffusion_term: f64,
    pub mass: f64,
}

impl FpRow {
    pub fn measure<P: Potential + ?Sized>(t: f64, grid: &DensityGrid, pot: &P, beta: f64) -> Self {
        let (drift_term, diffusion_term) = entropy_production_terms(grid, pot, beta);
        Self {
            t,
            free_energy: free_energy(grid, pot, beta),
            entropy: entropy(grid),
            drift_term,
            diffusion_term,
            mass: grid.mass(),
        }
    }
}

pub const FP_RUN_HEADER: &str = "t,free_energy,entropy,drift_term,diffusion_term,mass";

pub fn write_run_csv<W: Write>(rows: &[FpRow], mut w: W) -> Result<()> {
    writeln!(w, "{FP_RUN_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.t, r.free_energy, r.entropy, r.drift_term, r.diffusion_term, r.mass
        )?;
    }
    Ok(())
}

/// `steps` solver steps, measuring the initial state and every
/// `record_every`-th state after it.
pub fn fp_run<P: Potential + ?Sized>(
    grid: &DensityGrid,
    pot: &P,
    beta: f64,
    dt: f64,
    steps: usize,
    record_every: usize,
) -> Result<(DensityGrid, Vec<FpRow>)> {
    let limit = stability_limit(grid, pot, beta)?;
    if !(dt > 0.0) || dt > limit {
        return Err(Error::Unstable { dt, limit });
    }
    if record_every == 0 {
        return Err(Error::config("record_every must be >= 1"));
    }
    let op = Operator::new(grid, pot, beta)?;
    let dx = grid.dx();
    let mut state = grid.clone();
    let mut flux = Vec::with_capacity(grid.m());
    let mut rows = vec![FpRow::measure(0.0, &state, pot, beta)];
    for step in 1..=steps {
        let mass = state.mass();
        op.apply(&mut state.rho, &mut flux, dt, dx);
        clip_negative(&mut state.rho, mass, dx);
        if step % record_every == 0 {
            rows.push(FpRow::measure(step as f64 * dt, &state, pot, beta));
        }
    }
    Ok((state, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::{DoubleWell, Quadratic};

    #[test]
    fn gibbs_state_is_exactly_stationary() {
        for beta in [0.3, 1.0] {
            let pot = DoubleWell::default();
            let g = DensityGrid::gibbs(-3.0, 3.0, 200, &pot, beta).unwrap();
            let dt = 0.5 * stability_limit(&g, &pot, beta).unwrap();
            let next = fp_step(&g, &pot, beta, dt).unwrap();
            let diff = g.rho.iter().zip(&next.rho).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(diff < 1e-12, "{diff}");
        }
    }

    #[test]
    fn flat_profile_is_unchanged() {
        let flat = Quadratic { stiffness: 0.0 };
        let g = DensityGrid::uniform(0.0, 1.0, 50).unwrap();
        let next = fp_step(&g, &flat, 0.5, 1e-4).unwrap();
        assert_eq!(next.rho, g.rho);
    }

    #[test]
    fn oversized_dt_is_rejected_with_limit() {
        let g = DensityGrid::uniform(-1.0, 1.0, 20).unwrap();
        let pot = Quadratic::default();
        let limit = stability_limit(&g, &pot, 1.0).unwrap();
        match fp_step(&g, &pot, 1.0, 2.0 * limit) {
            Err(Error::Unstable { limit: l, .. }) => assert_eq!(l, limit),
            other => panic!("{other:?}"),
        }
        assert!(fp_step(&g, &pot, 0.0, 1e-6).is_err());
    }

    #[test]
    fn point_mass_free_energy() {
        let pot = Quadratic::default();
        let g = DensityGrid::point_mass(-2.0, 2.0, 8, 5).unwrap();
        let beta = 0.7;
        let expected = pot.value1(g.center(5)) + beta * (1.0 / g.dx()).ln();
        assert!((free_energy(&g, &pot, beta) - expected).abs() < 1e-14);
        assert!((free_energy(&g, &pot, 0.0) - pot.value1(g.center(5))).abs() < 1e-15);
    }

    #[test]
    fn gaussian_free_energy_closed_form() {
        let pot = Quadratic::default();
        let g = DensityGrid::gibbs(-8.0, 8.0, 400, &pot, 1.0).unwrap();
        let exact = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
        assert!((free_energy(&g, &pot, 1.0) - exact).abs() < 1e-3);
    }

    #[test]
    fn stationary_entropy_production_balances() {
        let pot = Quadratic::default();
        let g = DensityGrid::gibbs(-8.0, 8.0, 400, &pot, 1.0).unwrap();
        let (drift, diffusion) = entropy_production_terms(&g, &pot, 1.0);
        assert!((drift + 1.0).abs() < 1e-2);
        assert!((diffusion - 1.0).abs() < 1e-2);
        assert_eq!(entropy_production_terms(&g, &pot, 0.0).1, 0.0);
    }

    #[test]
    fn report_tracks_worst_uphill_step() {
        let r = DissipationReport::from_energies(&[3.0, 2.0, 2.5, 1.0]);
        assert_eq!(r.max_uphill, 0.5);
        assert_eq!(r.worst_step, Some(1));
        assert!(!r.passes(1e-3));
        assert!(DissipationReport::from_energies(&[3.0, 2.0, 1.0]).passes(1e-3));
    }

    #[test]
    fn run_csv_header() {
        let pot = Quadratic::default();
        let g = DensityGrid::gibbs(-4.0, 4.0, 40, &pot, 1.0).unwrap();
        let (_, rows) = fp_run(&g, &pot, 1.0, 1e-3, 4, 2).unwrap();
        assert_eq!(rows.len(), 3);
        let mut buf = Vec::new();
        write_run_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some(FP_RUN_HEADER));
        assert_eq!(text.lines().count(), 4);
    }
}
