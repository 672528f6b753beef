//! Hebbian associative memory and finite-horizon retrieval diagnostics.

use std::io::{Read, Write};

use hclm_core::numerics::rng;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PATTERN_STREAM: u64 = 6;
const FLIP_STREAM: u64 = 7;

#[derive(Clone, Debug, PartialEq)]
pub struct HopfieldModel {
    pub n: usize,
    pub patterns: Vec<Vec<i8>>,
    /// `N x N`, row-major, symmetric with zero diagonal.
    pub w: Vec<f64>,
}

impl HopfieldModel {
    /// Local fields `W z`.
    pub fn field(&self, z: &[f64]) -> Vec<f64> {
        self.w.chunks(self.n).map(|row| row.iter().zip(z).map(|(a, b)| a * b).sum()).collect()
    }

    /// `-z^T W z / 2`.
    pub fn energy(&self, z: &[f64]) -> f64 {
        -0.5 * self.field(z).iter().zip(z).map(|(h, v)| h * v).sum::<f64>()
    }
}

/// `W = (1/N) sum_mu xi xi^T` with the diagonal zeroed.
pub fn hebbian_store(patterns: &[Vec<i8>]) -> Result<HopfieldModel> {
    let n = patterns.first().map(Vec::len).unwrap_or(0);
    if patterns.is_empty() || n == 0 {
        return Err(Error::config("need at least one nonempty pattern"));
    }
    for p in patterns {
        if p.len() != n {
            return Err(Error::Length(p.len(), n));
        }
        if p.iter().any(|v| *v != 1 && *v != -1) {
            return Err(Error::config("pattern entries must be +1 or -1"));
        }
    }
    let mut w = vec![0.0; n * n];
    for p in patterns {
        for i in 0..n {
            for j in (i + 1)..n {
                w[i * n + j] += f64::from(p[i] * p[j]);
            }
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            w[i * n + j] /= n as f64;
            w[j * n + i] = w[i * n + j];
        }
    }
    Ok(HopfieldModel {
        n,
        patterns: patterns.to_vec(),
        w,
    })
}

pub fn random_patterns(p: usize, n: usize, seed: u64) -> Vec<Vec<i8>> {
    let mut r = rng::stream(seed, PATTERN_STREAM);
    (0..p)
        .map(|_| (0..n).map(|_| if r.random::<bool>() { 1 } else { -1 }).collect())
        .collect()
}

/// `xi` with `round(fraction * N)` distinct entries negated.
pub fn flip_bits(xi: &[i8], fraction: f64, seed: u64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::config(format!("flip fraction must lie in [0, 1], got {fraction}")));
    }
    let mut z: Vec<f64> = xi.iter().map(|&v| f64::from(v)).collect();
    let k = (fraction * xi.len() as f64).round() as usize;
    let mut r = rng::stream(seed, FLIP_STREAM);
    for i in rand::seq::index::sample(&mut r, xi.len(), k) {
        z[i] = -z[i];
    }
    Ok(z)
}

/// `(1/N) sum z_i xi_i`.
pub fn overlap(z: &[f64], xi: &[i8]) -> Result<f64> {
    if z.len() != xi.len() {
        return Err(Error::Length(z.len(), xi.len()));
    }
    Ok(z.iter().zip(xi).map(|(a, &b)| a * f64::from(b)).sum::<f64>() / z.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DynamicsMode {
    /// `z <- sign(W z)` for all neurons at once.
    SyncSign,
    /// One sweep per step, neurons updated in index order.
    Sequential,
    /// Explicit Euler on `dz/dt = -z + tanh(gain W z)`.
    TanhOde { gain: f64, dt: f64 },
}

fn sign(h: f64) -> f64 {
    if h >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// States `z_0 ..= z_T`.
pub fn run_dynamics(model: &HopfieldModel, z0: &[f64], t: usize, mode: DynamicsMode) -> Result<Vec<Vec<f64>>> {
    if t < 1 {
        return Err(Error::config("horizon T must be >= 1"));
    }
    if z0.len() != model.n {
        return Err(Error::Length(z0.len(), model.n));
    }
    let n = model.n;
    let mut traj = Vec::with_capacity(t + 1);
    traj.push(z0.to_vec());
    let mut z = z0.to_vec();
    for _ in 0..t {
        match mode {
            DynamicsMode::SyncSign => {
                z = model.field(&z).into_iter().map(sign).collect();
            }
            DynamicsMode::Sequential => {
                for i in 0..n {
                    let h: f64 = model.w[i * n..(i + 1) * n].iter().zip(&z).map(|(a, b)| a * b).sum();
                    z[i] = sign(h);
                }
            }
            DynamicsMode::TanhOde { gain, dt } => {
                let h = model.field(&z);
                for (zi, hi) in z.iter_mut().zip(h) {
                    *zi += dt * (-*zi + (gain * hi).tanh());
                }
            }
        }
        traj.push(z.clone());
    }
    Ok(traj)
}

pub fn overlap_trace(traj: &[Vec<f64>], xi: &[i8]) -> Result<Vec<f64>> {
    traj.iter().map(|z| overlap(z, xi)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Recovery {
    pub m_max: f64,
    pub t_argmax: usize,
    pub m_final: f64,
    pub recoverable: bool,
}

fn horizon(traj: &[Vec<f64>], t: usize) -> Result<()> {
    if t == 0 || t >= traj.len() {
        return Err(Error::config(format!(
            "horizon T = {t} must lie in [1, {}] for this trajectory",
            traj.len().saturating_sub(1)
        )));
    }
    Ok(())
}

/// Largest overlap over `0..=T` (earliest on ties), and the overlap at `T`.
pub fn transient_recovery(traj: &[Vec<f64>], xi: &[i8], t: usize, threshold: f64) -> Result<Recovery> {
    horizon(traj, t)?;
    let m = overlap_trace(&traj[..=t], xi)?;
    let (t_argmax, m_max) = m
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, v)| if v > best.1 { (i, v) } else { best });
    Ok(Recovery {
        m_max,
        t_argmax,
        m_final: m[t],
        recoverable: m_max >= threshold,
    })
}

/// Fraction of the steps `0..T` whose overlap is at least `tau_r`.
pub fn memory_effectiveness(traj: &[Vec<f64>], xi: &[i8], t: usize, tau_r: f64) -> Result<f64> {
    horizon(traj, t)?;
    let hits = overlap_trace(&traj[..t], xi)?.iter().filter(|m| **m >= tau_r).count();
    Ok(hits as f64 / t as f64)
}

/// Mean of `||grad_z m||` over the steps `0..T`. The linear overlap has the
/// constant gradient `xi / N`, so this is `1 / sqrt(N)` for every trajectory.
pub fn memory_force(traj: &[Vec<f64>], xi: &[i8], t: usize) -> Result<f64> {
    horizon(traj, t)?;
    if traj[0].len() != xi.len() {
        return Err(Error::Length(traj[0].len(), xi.len()));
    }
    Ok(1.0 / (xi.len() as f64).sqrt())
}

/// [`memory_force`] for an arbitrary overlap function, by central differences.
pub fn memory_force_with(traj: &[Vec<f64>], t: usize, m: impl Fn(&[f64]) -> f64, h: f64) -> Result<f64> {
    horizon(traj, t)?;
    let mut total = 0.0;
    for z in &traj[..t] {
        let mut probe = z.clone();
        let mut sq = 0.0;
        for i in 0..z.len() {
            probe[i] = z[i] + h;
            let up = m(&probe);
            probe[i] = z[i] - h;
            let down = m(&probe);
            probe[i] = z[i];
            sq += ((up - down) / (2.0 * h)).powi(2);
        }
        total += sq.sqrt();
    }
    Ok(total / t as f64)
}

/// Corrupted-probe retrieval experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MemoryProtocol {
    pub n: usize,
    pub flip_fraction: f64,
    pub horizon: usize,
    pub mode: DynamicsMode,
    pub retrieval_threshold: f64,
    pub tau_r: f64,
}

impl Default for MemoryProtocol {
    fn default() -> Self {
        Self {
            n: 200,
            flip_fraction: 0.15,
            horizon: 50,
            mode: DynamicsMode::SyncSign,
            retrieval_threshold: 0.8,
            tau_r: 0.8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryTrial {
    pub load_ratio: f64,
    pub seed: u64,
    pub m_max: f64,
    pub t_argmax: usize,
    pub m_final: f64,
    #[serde(rename = "E_mem")]
    pub e_mem: f64,
    pub recoverable: bool,
}

/// Stores `round(load_ratio * N)` random patterns, corrupts the first and runs
/// the dynamics from it.
pub fn memory_trial(load_ratio: f64, seed: u64, proto: &MemoryProtocol) -> Result<MemoryTrial> {
    if proto.n < 1 || !(load_ratio > 0.0) {
        return Err(Error::config(format!(
            "need n >= 1 and load_ratio > 0, got n = {} and load_ratio = {load_ratio}",
            proto.n
        )));
    }
    let p = ((load_ratio * proto.n as f64).round() as usize).max(1);
    let patterns = random_patterns(p, proto.n, seed);
    let model = hebbian_store(&patterns)?;
    let xi = &patterns[0];
    let z0 = flip_bits(xi, proto.flip_fraction, seed)?;
    let traj = run_dynamics(&model, &z0, proto.horizon, proto.mode)?;
    let rec = transient_recovery(&traj, xi, proto.horizon, proto.retrieval_threshold)?;
    Ok(MemoryTrial {
        load_ratio,
        seed,
        m_max: rec.m_max,
        t_argmax: rec.t_argmax,
        m_final: rec.m_final,
        e_mem: memory_effectiveness(&traj, xi, proto.horizon, proto.tau_r)?,
        recoverable: rec.recoverable,
    })
}

pub const MEMORY_HEADER: &str = "load_ratio,seed,m_max,t_argmax,m_final,E_mem,recoverable";

pub fn write_memory_csv<W: Write>(trials: &[MemoryTrial], mut w: W) -> Result<()> {
    writeln!(w, "{MEMORY_HEADER}")?;
    for t in trials {
        writeln!(
            w,
            "{:.16e},{},{:.16e},{},{:.16e},{:.16e},{}",
            t.load_ratio, t.seed, t.m_max, t.t_argmax, t.m_final, t.e_mem, t.recoverable
        )?;
    }
    Ok(())
}

pub fn read_memory_csv<R: Read>(r: R) -> Result<Vec<MemoryTrial>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .map(|row| row.map_err(|e| Error::Table(e.to_string())))
        .collect()
}
