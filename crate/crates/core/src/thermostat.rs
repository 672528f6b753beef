//! The full training loop with an adaptive entropy coefficient, and the grid
//! sweep over coefficients, surrogates and controller modes.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    effectiveness, evaluate, EffectivenessConfig, EnergyConfig, ModelProblem, StepRecord,
};
use crate::error::{Error, Result};
use crate::models::{self, generate_task, init_params, Dataset, EncoderSpec, TaskKind, TaskSpec};
use crate::numerics::rng;
use crate::surrogates::SurrogateKind;

/// Rewards averaged into the default reward target.
pub const WARMUP_REWARDS: usize = 10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThermoMode {
    #[default]
    Fixed,
    /// Force feedback only.
    Thermostat,
    /// Reward and force feedback.
    RlThermostat,
}

impl ThermoMode {
    pub const ALL: [ThermoMode; 3] = [ThermoMode::Fixed, ThermoMode::Thermostat, ThermoMode::RlThermostat];

    pub fn as_str(self) -> &'static str {
        match self {
            ThermoMode::Fixed => "fixed",
            ThermoMode::Thermostat => "thermostat",
            ThermoMode::RlThermostat => "rl_thermostat",
        }
    }
}

impl std::fmt::Display for ThermoMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ThermoMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ThermoMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown mode {s:?} (fixed, thermostat, rl_thermostat)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThermostatConfig {
    pub mode: ThermoMode,
    pub beta0: f64,
    pub beta_min: f64,
    pub beta_max: f64,
    pub alpha_r: f64,
    pub alpha_g: f64,
    /// Reward target; `None` uses the running mean of the first rewards.
    pub r_star: Option<f64>,
    /// Force target; `None` uses the force at the first step.
    pub g_star: Option<f64>,
}

impl Default for ThermostatConfig {
    fn default() -> Self {
        Self {
            mode: ThermoMode::Fixed,
            beta0: 0.1,
            beta_min: 0.0,
            beta_max: 10.0,
            alpha_r: 0.01,
            alpha_g: 0.01,
            r_star: None,
            g_star: None,
        }
    }
}

impl ThermostatConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_min >= 0.0) || !(self.beta_min <= self.beta_max) {
            return Err(Error::config(format!(
                "thermo.beta_min ({}) and thermo.beta_max ({}) must satisfy 0 <= beta_min <= beta_max",
                self.beta_min, self.beta_max
            )));
        }
        if !(self.beta0 >= self.beta_min && self.beta0 <= self.beta_max) {
            return Err(Error::config(format!(
                "thermo.beta0 = {} lies outside [thermo.beta_min, thermo.beta_max] = [{}, {}]",
                self.beta0, self.beta_min, self.beta_max
            )));
        }
        if !(self.alpha_r >= 0.0) || !(self.alpha_g >= 0.0) {
            return Err(Error::config("thermo.alpha_r and thermo.alpha_g must be >= 0"));
        }
        Ok(())
    }

    /// `(alpha_r, alpha_g)` as the mode applies them.
    pub fn gains(&self) -> (f64, f64) {
        match self.mode {
            ThermoMode::Fixed => (0.0, 0.0),
            ThermoMode::Thermostat => (0.0, self.alpha_g),
            ThermoMode::RlThermostat => (self.alpha_r, self.alpha_g),
        }
    }
}

/// `clamp(beta + alpha_r (r - r*) - alpha_g (G - G*), beta_min, beta_max)`.
pub fn update_beta(beta_t: f64, r_t: f64, g_t: f64, cfg: &ThermostatConfig, r_star: f64, g_star: f64) -> f64 {
    if cfg.mode == ThermoMode::Fixed {
        return beta_t;
    }
    let (ar, ag) = cfg.gains();
    let raw = beta_t + ar * (r_t - r_star) - ag * (g_t - g_star);
    raw.clamp(cfg.beta_min, cfg.beta_max)
}

/// Controller state, resolving the self-calibrating targets as rewards arrive.
#[derive(Clone, Debug)]
pub struct Thermostat {
    cfg: ThermostatConfig,
    pub beta: f64,
    g_star: Option<f64>,
    rewards_seen: Vec<f64>,
}

impl Thermostat {
    pub fn new(cfg: &ThermostatConfig) -> Self {
        Self {
            cfg: cfg.clone(),
            beta: cfg.beta0,
            g_star: cfg.g_star,
            rewards_seen: Vec::with_capacity(WARMUP_REWARDS),
        }
    }

    pub fn r_star(&self) -> f64 {
        self.cfg.r_star.unwrap_or_else(|| {
            self.rewards_seen.iter().sum::<f64>() / self.rewards_seen.len().max(1) as f64
        })
    }

    /// Feeds one reward and force, returns the coefficient for the next step.
    pub fn observe(&mut self, r_t: f64, g_t: f64) -> f64 {
        if self.rewards_seen.len() < WARMUP_REWARDS {
            self.rewards_seen.push(r_t);
        }
        let g_star = *self.g_star.get_or_insert(g_t);
        self.beta = update_beta(self.beta, r_t, g_t, &self.cfg, self.r_star(), g_star);
        self.beta
    }
}

/// Negative validation loss.
pub fn reward_signal(theta: &[f64], val: &Dataset, spec: &EncoderSpec, kind: TaskKind) -> Result<f64> {
    if val.is_empty() {
        return Err(Error::config("reward needs a nonempty validation batch"));
    }
    Ok(-models::loss_value(theta, val, spec, kind)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub encoder: EncoderSpec,
    pub task: TaskSpec,
    pub energy: EnergyConfig,
    pub thermo: ThermostatConfig,
    pub eta: f64,
    pub steps: usize,
    pub seed: u64,
    pub log_every: usize,
    /// Rows per step drawn without replacement; `None` is full batch.
    pub minibatch: Option<usize>,
    /// Fresh representation noise every step instead of one fixed draw.
    pub resample_noise: bool,
    /// Fresh validation draw from the held-out pool every step.
    pub resample_val: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderSpec::default(),
            task: TaskSpec::default(),
            energy: EnergyConfig::default(),
            thermo: ThermostatConfig::default(),
            eta: 0.05,
            steps: 200,
            seed: 0,
            log_every: 1,
            minibatch: None,
            resample_noise: false,
            resample_val: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.task.validate()?;
        self.energy.validate()?;
        self.thermo.validate()?;
        if self.encoder.input_dim != self.task.input_dim {
            return Err(Error::config(format!(
                "encoder.input_dim ({}) must equal task.input_dim ({})",
                self.encoder.input_dim, self.task.input_dim
            )));
        }
        if self.encoder.output_dim != self.task.output_dim() {
            return Err(Error::config(format!(
                "encoder.output_dim ({}) must equal the task's output width ({})",
                self.encoder.output_dim,
                self.task.output_dim()
            )));
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::config(format!("eta must be > 0, got {}", self.eta)));
        }
        if self.steps < 1 || self.log_every < 1 {
            return Err(Error::config("steps and log_every must be >= 1"));
        }
        if let Some(m) = self.minibatch {
            if m < 2 || m > self.task.n_train {
                return Err(Error::config(format!(
                    "minibatch must lie in [2, task.n_train = {}], got {m}",
                    self.task.n_train
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub records: Vec<StepRecord>,
    pub theta: Vec<f64>,
    pub final_train_loss: f64,
    pub final_test_loss: f64,
}

impl RunOutput {
    pub fn final_gen_gap(&self) -> f64 {
        self.final_test_loss - self.final_train_loss
    }
}

fn sample_rows(n: usize, m: usize, seed: u64) -> Vec<usize> {
    let mut r = rng::stream(seed, 3);
    rand::seq::index::sample(&mut r, n, m).into_vec()
}

/// Trains with gradient descent on the regularized energy while the
/// controller adapts the entropy coefficient after every step.
pub fn run_er_hclm(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let data = generate_task(&cfg.task)?;
    run_on(cfg, &data)
}

/// As [`run_er_hclm`] on already generated data.
pub fn run_on(cfg: &RunConfig, data: &models::TaskData) -> Result<RunOutput> {
    cfg.validate()?;
    let spec = &cfg.encoder;
    let kind = data.kind;
    let mut theta = init_params(spec, rng::derive_seed(cfg.seed, &[0]));
    let mut thermo = Thermostat::new(&cfg.thermo);
    let mut records = Vec::new();
    let mut problem = ModelProblem {
        encoder: spec.clone(),
        kind,
        batch: data.train.clone(),
        noise_seed: rng::derive_seed(cfg.seed, &[1]),
    };
    for t in 0..cfg.steps {
        if let Some(m) = cfg.minibatch {
            let idx = sample_rows(data.train.len(), m, rng::derive_seed(cfg.seed, &[2, t as u64]));
            problem.batch = data.train.select(&idx);
        }
        if cfg.resample_noise {
            problem.noise_seed = rng::derive_seed(cfg.seed, &[1, t as u64]);
        }
        let beta = thermo.beta;
        let ev = evaluate(&problem, &theta, &cfg.energy)?;
        let mut rec = StepRecord::from_evaluation(t, &ev, beta);
        if !(rec.f.is_finite() && rec.g.is_finite()) {
            return Err(Error::Divergence { step: t, partial: records });
        }
        let logged = t % cfg.log_every == 0;
        if logged {
            rec.gen_gap = Some(models::gen_gap(&theta, &data.train, &data.test, spec, kind)?);
        }
        let grad = ev.grad_energy(beta);
        let next: Vec<f64> = theta.iter().zip(&grad).map(|(p, g)| p - cfg.eta * g).collect();
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: t, partial: records });
        }
        theta = next;
        let val = if cfg.resample_val {
            let m = data.val.len().div_ceil(2).max(1);
            data.val.select(&sample_rows(data.val.len(), m, rng::derive_seed(cfg.seed, &[4, t as u64])))
        } else {
            data.val.clone()
        };
        let r = reward_signal(&theta, &val, spec, kind)?;
        if !r.is_finite() {
            return Err(Error::Divergence { step: t, partial: records });
        }
        rec.r_t = r;
        thermo.observe(r, rec.g);
        if logged {
            records.push(rec);
        }
    }
    let final_train_loss = models::loss_value(&theta, &data.train, spec, kind)?;
    let final_test_loss = models::loss_value(&theta, &data.test, spec, kind)?;
    Ok(RunOutput {
        records,
        theta,
        final_train_loss,
        final_test_loss,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub beta: f64,
    pub surrogate: SurrogateKind,
    pub mode: ThermoMode,
    pub final_test_loss: f64,
    pub gen_gap: f64,
    #[serde(rename = "mean_G")]
    pub mean_g: f64,
    pub mean_beta_t: f64,
    pub mean_reward: f64,
    pub effective: bool,
}

pub const SUMMARY_HEADER: &str =
    "beta,surrogate,mode,final_test_loss,gen_gap,mean_G,mean_beta_t,mean_reward,effective";

#[derive(Clone, Debug)]
pub struct Cell {
    pub beta_index: usize,
    pub surrogate_index: usize,
    pub mode_index: usize,
    pub config: RunConfig,
    pub outcome: std::result::Result<RunOutput, String>,
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub cells: Vec<Cell>,
    pub summary: Vec<SummaryRow>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// The configuration a sweep runs in cell `(i, j, k)`.
pub fn cell_config(base: &RunConfig, beta: f64, surrogate: SurrogateKind, mode: ThermoMode, coords: [usize; 3]) -> RunConfig {
    let mut cfg = base.clone();
    cfg.seed = rng::derive_seed(base.seed, &coords.map(|c| c as u64));
    cfg.energy.beta = beta;
    cfg.energy.surrogate.kind = surrogate;
    cfg.thermo.mode = mode;
    cfg.thermo.beta0 = beta;
    cfg
}

/// Runs every `(beta, surrogate, mode)` cell on `jobs` worker threads.
/// A failing cell is recorded and the remaining cells still run.
pub fn sweep(
    base: &RunConfig,
    betas: &[f64],
    surrogates: &[SurrogateKind],
    modes: &[ThermoMode],
    ecfg: &EffectivenessConfig,
    jobs: usize,
) -> Result<SweepResult> {
    if betas.is_empty() || surrogates.is_empty() || modes.is_empty() {
        return Err(Error::config("sweep needs nonempty betas, surrogates and modes"));
    }
    ecfg.validate()?;
    base.task.validate()?;
    let data = generate_task(&base.task)?;
    let mut configs = Vec::new();
    for (i, &beta) in betas.iter().enumerate() {
        for (j, &s) in surrogates.iter().enumerate() {
            for (k, &m) in modes.iter().enumerate() {
                configs.push(([i, j, k], cell_config(base, beta, s, m, [i, j, k])));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::config(format!("worker pool: {e}")))?;
    let cells: Vec<Cell> = pool.install(|| {
        configs
            .into_par_iter()
            .map(|([i, j, k], config)| {
                let outcome = run_on(&config, &data).map_err(|e| e.to_string());
                if let Err(e) = &outcome {
                    log::error!("cell beta={} surrogate={} mode={} failed: {e}", betas[i], surrogates[j], modes[k]);
                }
                Cell {
                    beta_index: i,
                    surrogate_index: j,
                    mode_index: k,
                    config,
                    outcome,
                }
            })
            .collect()
    });
    let summary = cells
        .iter()
        .map(|c| summarize(c, ecfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult { cells, summary })
}

fn summarize(cell: &Cell, ecfg: &EffectivenessConfig) -> Result<SummaryRow> {
    let cfg = &cell.config;
    let mut row = SummaryRow {
        beta: cfg.thermo.beta0,
        surrogate: cfg.energy.surrogate.kind,
        mode: cfg.thermo.mode,
        final_test_loss: f64::NAN,
        gen_gap: f64::NAN,
        mean_g: f64::NAN,
        mean_beta_t: f64::NAN,
        mean_reward: f64::NAN,
        effective: false,
    };
    if let Ok(out) = &cell.outcome {
        let recs = &out.records;
        row.final_test_loss = out.final_test_loss;
        row.gen_gap = out.final_gen_gap();
        row.mean_g = mean(recs.iter().map(|r| r.g));
        row.mean_beta_t = mean(recs.iter().map(|r| r.beta_t));
        row.mean_reward = mean(recs.iter().map(|r| r.r_t));
        row.effective = effectiveness(recs, ecfg)?.effective;
    }
    Ok(row)
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], mut w: W) -> Result<()> {
    writeln!(w, "{SUMMARY_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{:.16e},{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
            r.beta, r.surrogate, r.mode, r.final_test_loss, r.gen_gap, r.mean_g, r.mean_beta_t, r.mean_reward, r.effective
        )?;
    }
    Ok(())
}

pub fn read_summary_csv<R: Read>(r: R) -> Result<Vec<SummaryRow>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .map(|row| row.map_err(|e| Error::Table(e.to_string())))
        .collect()
}
