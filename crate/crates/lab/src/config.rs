//! Strict JSON experiment configuration.
//!
//! Every section has defaults, so `{}` is a valid document. Unknown keys are
//! rejected, and parse errors carry the dotted path of the offending key.

use std::fs;
use std::path::{Path, PathBuf};

use hclm_core::dynamics::EffectivenessConfig;
use hclm_core::surrogates::SurrogateKind;
use hclm_core::thermostat::{cell_config, RunConfig, ThermoMode};
use hclm_langevin::PotentialSpec;
use hclm_scaling_memory::{MemoryProtocol, ScalingModel};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Root of the output tree; runs land in `<output_dir>/<command>/<tag>/`.
    pub output_dir: PathBuf,
    pub tag: String,
    /// Worker threads for grid commands.
    pub jobs: usize,
    /// Emit SVG plots next to the CSV outputs.
    pub plots: bool,
    pub run: RunConfig,
    pub sweep: SweepSettings,
    pub langevin: LangevinSettings,
    pub fokker_planck: FokkerPlanckSettings,
    pub scaling: ScalingSettings,
    pub memory: MemorySettings,
    pub gradcheck: GradcheckSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("runs"),
            tag: "default".into(),
            jobs: 1,
            plots: true,
            run: RunConfig::default(),
            sweep: SweepSettings::default(),
            langevin: LangevinSettings::default(),
            fokker_planck: FokkerPlanckSettings::default(),
            scaling: ScalingSettings::default(),
            memory: MemorySettings::default(),
            gradcheck: GradcheckSettings::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSettings {
    pub betas: Vec<f64>,
    pub surrogates: Vec<SurrogateKind>,
    pub modes: Vec<ThermoMode>,
    pub effectiveness: EffectivenessConfig,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            betas: vec![0.01, 0.03, 0.1, 0.3, 1.0],
            surrogates: SurrogateKind::ALL.to_vec(),
            modes: ThermoMode::ALL.to_vec(),
            effectiveness: EffectivenessConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LangevinSettings {
    pub potential: PotentialSpec,
    pub beta: f64,
    pub dt: f64,
    pub steps: usize,
    pub particles: usize,
    /// Common starting point; its length sets the dimension.
    pub x0: Vec<f64>,
    pub seed: u64,
    pub record_every: usize,
    pub hist_lo: f64,
    pub hist_hi: f64,
    pub hist_bins: usize,
}

impl Default for LangevinSettings {
    fn default() -> Self {
        Self {
            potential: PotentialSpec::default(),
            beta: 0.5,
            dt: 1e-3,
            steps: 10_000,
            particles: 10_000,
            x0: vec![0.0],
            seed: 0,
            record_every: 100,
            hist_lo: -4.0,
            hist_hi: 4.0,
            hist_bins: 80,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialDensity {
    Gaussian { mean: f64, std: f64 },
    Uniform,
    PointMass { cell: usize },
}

impl Default for InitialDensity {
    fn default() -> Self {
        InitialDensity::Gaussian { mean: 1.0, std: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FokkerPlanckSettings {
    pub potential: PotentialSpec,
    pub beta: f64,
    pub lo: f64,
    pub hi: f64,
    pub cells: usize,
    /// Step size; `None` takes half the stability limit.
    pub dt: Option<f64>,
    pub steps: usize,
    pub record_every: usize,
    pub initial: InitialDensity,
}

impl Default for FokkerPlanckSettings {
    fn default() -> Self {
        Self {
            potential: PotentialSpec::DoubleWell { height: 1.0, tilt: 0.0 },
            beta: 0.5,
            lo: -3.0,
            hi: 3.0,
            cells: 200,
            dt: None,
            steps: 10_000,
            record_every: 100,
            initial: InitialDensity::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalingSettings {
    pub model: ScalingModel,
    pub sizes: Vec<f64>,
    /// Relative Gaussian noise on each synthetic excess-loss sample.
    pub noise: f64,
    pub seed: u64,
    /// Trajectory CSVs (e.g. from `sweep`) to summarize as injection/dissipation ratios.
    pub trajectories: Vec<PathBuf>,
}

impl Default for ScalingSettings {
    fn default() -> Self {
        Self {
            model: ScalingModel::default(),
            sizes: (0..20).map(|k| 4.0 * 1.4f64.powi(k)).collect(),
            noise: 0.0,
            seed: 0,
            trajectories: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MemorySettings {
    pub protocol: MemoryProtocol,
    pub load_ratios: Vec<f64>,
    /// Trials per load ratio, seeded `seed, seed + 1, ...`.
    pub trials: usize,
    pub seed: u64,
}

impl Default for MemorySettings {
    fn default() -> Self {
        Self {
            protocol: MemoryProtocol::default(),
            load_ratios: vec![0.05, 0.1, 0.14, 0.2, 0.3],
            trials: 50,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckSettings {
    pub configs: usize,
    pub tolerance: f64,
    pub fd_step: f64,
    pub seed: u64,
}

impl Default for GradcheckSettings {
    fn default() -> Self {
        Self {
            configs: 100,
            tolerance: 1e-5,
            fd_step: 1e-5,
            seed: 0,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(LabError::invalid(format!("{name} must be finite and > 0, got {v}")))
    }
}

fn at_least_one(name: &str, v: usize) -> Result<()> {
    if v >= 1 {
        Ok(())
    } else {
        Err(LabError::invalid(format!("{name} must be >= 1")))
    }
}

impl ExperimentConfig {
    /// Checks every section against the invariants of the types it feeds.
    pub fn validate(&self) -> Result<()> {
        if self.tag.is_empty() || self.tag.contains(['/', '\\']) || self.tag == "." || self.tag == ".." {
            return Err(LabError::invalid(format!("tag must be a plain directory name, got {:?}", self.tag)));
        }
        at_least_one("jobs", self.jobs)?;
        self.run.validate().map_err(|e| LabError::invalid(format!("run: {e}")))?;

        let s = &self.sweep;
        if s.betas.is_empty() || s.surrogates.is_empty() || s.modes.is_empty() {
            return Err(LabError::invalid("sweep.betas, sweep.surrogates and sweep.modes must be nonempty"));
        }
        s.effectiveness.validate().map_err(|e| LabError::invalid(format!("sweep.effectiveness: {e}")))?;
        for (i, &beta) in s.betas.iter().enumerate() {
            for (j, &surrogate) in s.surrogates.iter().enumerate() {
                for (k, &mode) in s.modes.iter().enumerate() {
                    cell_config(&self.run, beta, surrogate, mode, [i, j, k])
                        .validate()
                        .map_err(|e| LabError::invalid(format!("sweep cell beta = {beta}: {e}")))?;
                }
            }
        }

        let l = &self.langevin;
        validate_potential("langevin.potential", l.potential)?;
        if !(l.beta >= 0.0) {
            return Err(LabError::invalid(format!("langevin.beta must be >= 0, got {}", l.beta)));
        }
        positive("langevin.dt", l.dt)?;
        at_least_one("langevin.particles", l.particles)?;
        at_least_one("langevin.x0 length", l.x0.len())?;
        at_least_one("langevin.record_every", l.record_every)?;
        at_least_one("langevin.hist_bins", l.hist_bins)?;
        if !(l.hist_lo < l.hist_hi) {
            return Err(LabError::invalid("langevin.hist_lo must be < langevin.hist_hi"));
        }

        let f = &self.fokker_planck;
        validate_potential("fokker_planck.potential", f.potential)?;
        positive("fokker_planck.beta", f.beta)?;
        if !(f.lo < f.hi) {
            return Err(LabError::invalid("fokker_planck.lo must be < fokker_planck.hi"));
        }
        if f.cells < 2 {
            return Err(LabError::invalid("fokker_planck.cells must be >= 2"));
        }
        if let Some(dt) = f.dt {
            positive("fokker_planck.dt", dt)?;
        }
        at_least_one("fokker_planck.record_every", f.record_every)?;
        match f.initial {
            InitialDensity::Gaussian { std, .. } => positive("fokker_planck.initial.std", std)?,
            InitialDensity::PointMass { cell } if cell >= f.cells => {
                return Err(LabError::invalid(format!(
                    "fokker_planck.initial.cell {cell} is outside the {} cells",
                    f.cells
                )))
            }
            _ => {}
        }

        let sc = &self.scaling;
        sc.model.validate().map_err(|e| LabError::invalid(format!("scaling.model: {e}")))?;
        if sc.sizes.len() < 3 {
            return Err(LabError::invalid("scaling.sizes needs at least 3 entries"));
        }
        for &s in &sc.sizes {
            positive("scaling.sizes entry", s)?;
        }
        if !(sc.noise >= 0.0 && sc.noise < 1.0) {
            return Err(LabError::invalid(format!("scaling.noise must lie in [0, 1), got {}", sc.noise)));
        }

        let m = &self.memory;
        let p = &m.protocol;
        at_least_one("memory.protocol.n", p.n)?;
        at_least_one("memory.protocol.horizon", p.horizon)?;
        at_least_one("memory.trials", m.trials)?;
        if !(0.0..=1.0).contains(&p.flip_fraction) {
            return Err(LabError::invalid("memory.protocol.flip_fraction must lie in [0, 1]"));
        }
        if m.load_ratios.is_empty() {
            return Err(LabError::invalid("memory.load_ratios must be nonempty"));
        }
        for &r in &m.load_ratios {
            positive("memory.load_ratios entry", r)?;
        }

        let g = &self.gradcheck;
        at_least_one("gradcheck.configs", g.configs)?;
        positive("gradcheck.tolerance", g.tolerance)?;
        positive("gradcheck.fd_step", g.fd_step)?;
        Ok(())
    }

    /// `<output_dir>/<command>/<tag>`.
    pub fn run_dir(&self, command: &str) -> PathBuf {
        self.output_dir.join(command).join(&self.tag)
    }
}

fn validate_potential(name: &str, p: PotentialSpec) -> Result<()> {
    match p {
        PotentialSpec::Quadratic { stiffness } => positive(&format!("{name}.stiffness"), stiffness),
        PotentialSpec::DoubleWell { height, tilt } => {
            positive(&format!("{name}.height"), height)?;
            if tilt.is_finite() {
                Ok(())
            } else {
                Err(LabError::invalid(format!("{name}.tilt must be finite")))
            }
        }
    }
}

/// Parses a config document without validating it.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        LabError::invalid(format!("config key `{path}`: {}", e.into_inner()))
    })
}

/// Reads, parses and validates a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| LabError::invalid(format!("cannot read config {}: {e}", path.display())))?;
    let cfg = parse_config(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn to_json(cfg: &ExperimentConfig) -> Result<String> {
    Ok(serde_json::to_string_pretty(cfg)?)
}
