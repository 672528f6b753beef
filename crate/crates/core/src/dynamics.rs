//! The regularized energy, its gradient-descent dynamics and the diagnostics
//! computed along a trajectory: information force, injection and dissipation,
//! critical coefficient, descent bookkeeping, effectiveness and the
//! noisy-representation generalization bound.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{self, Dataset, EncoderSpec, TaskKind};
use crate::numerics::{dot, least_squares_line, norm, spd_solve, Graph, Tensor, Var};
use crate::surrogates::{self, SurrogateConfig};

/// Force magnitudes at or below this are treated as zero.
pub const FORCE_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OmegaKind {
    None,
    /// `||theta||^2 / 2`
    #[default]
    L2,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecKind {
    #[default]
    None,
    /// Half the mean squared head output.
    QuadraticPenalty,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnergyConfig {
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub surrogate: SurrogateConfig,
    pub omega_kind: OmegaKind,
    pub dec_kind: DecKind,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            gamma: 0.0,
            lambda: 0.0,
            surrogate: SurrogateConfig::default(),
            omega_kind: OmegaKind::L2,
            dec_kind: DecKind::None,
        }
    }
}

impl EnergyConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("beta", self.beta), ("gamma", self.gamma), ("lambda", self.lambda)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(format!("energy.{name} must be finite and >= 0, got {v}")));
            }
        }
        self.surrogate.validate()
    }

    pub fn with_beta(&self, beta: f64) -> Self {
        Self { beta, ..self.clone() }
    }
}

/// Scalars a problem records on the tape for a given parameter leaf.
pub struct Recorded {
    pub l_pred: Var,
    pub h: Var,
    /// Head output, when the problem has one; feeds `R_dec` and the metric.
    pub prediction: Option<Var>,
}

/// Something with a predictive loss and an entropy surrogate over a flat
/// parameter vector.
pub trait Problem: Send + Sync {
    fn dim(&self) -> usize;
    fn record(&self, g: &Graph, theta: Var, surrogate: &SurrogateConfig) -> Result<Recorded>;
}

/// An encoder evaluated on a fixed batch, with the surrogate taken on `Z + xi`.
#[derive(Clone, Debug)]
pub struct ModelProblem {
    pub encoder: EncoderSpec,
    pub kind: TaskKind,
    pub batch: Dataset,
    pub noise_seed: u64,
}

impl Problem for ModelProblem {
    fn dim(&self) -> usize {
        self.encoder.param_count()
    }

    fn record(&self, g: &Graph, theta: Var, surrogate: &SurrogateConfig) -> Result<Recorded> {
        let x = g.constant(self.batch.x.clone());
        let y = g.constant(self.batch.y.clone());
        let (z, yhat) = models::forward(g, theta, x, &self.encoder)?;
        let l_pred = models::pred_loss(g, yhat, y, self.kind)?;
        let z_noisy = surrogates::noisy_rep_var(g, z, surrogate.sigma_xi, self.noise_seed)?;
        let h = surrogates::surrogate(g, z_noisy, surrogate)?;
        Ok(Recorded {
            l_pred,
            h,
            prediction: Some(yhat),
        })
    }
}

type Functional = Box<dyn Fn(&Graph, Var) -> Result<Var> + Send + Sync>;

/// Explicit `L(theta)` and `H(theta)`, for checks with closed-form answers.
pub struct FunctionalProblem {
    dim: usize,
    l: Functional,
    h: Functional,
}

impl FunctionalProblem {
    pub fn new(
        dim: usize,
        l: impl Fn(&Graph, Var) -> Result<Var> + Send + Sync + 'static,
        h: impl Fn(&Graph, Var) -> Result<Var> + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            l: Box::new(l),
            h: Box::new(h),
        }
    }

    /// `L = ||theta - b||^2 / 2`, `H = ||theta - a||^2 / 2`.
    pub fn quadratic(b: Vec<f64>, a: Vec<f64>) -> Self {
        assert_eq!(a.len(), b.len(), "centers must have equal length");
        let dim = a.len();
        Self::new(
            dim,
            move |g, th| half_sq_dist(g, th, &b),
            move |g, th| half_sq_dist(g, th, &a),
        )
    }
}

impl Problem for FunctionalProblem {
    fn dim(&self) -> usize {
        self.dim
    }

    fn record(&self, g: &Graph, theta: Var, _: &SurrogateConfig) -> Result<Recorded> {
        Ok(Recorded {
            l_pred: (self.l)(g, theta)?,
            h: (self.h)(g, theta)?,
            prediction: None,
        })
    }
}

/// `||theta - c||^2 / 2` on the tape.
pub fn half_sq_dist(g: &Graph, theta: Var, c: &[f64]) -> Result<Var> {
    let c = g.constant(Tensor::vector(c.to_vec()));
    let d = g.sub(theta, c)?;
    let s = g.sum(g.square(d));
    Ok(g.scale(s, 0.5))
}

struct Tape {
    theta: Var,
    l_pred: Var,
    h: Var,
    /// Everything in `F` except the entropy term.
    rest: Var,
    omega: f64,
    r_dec: f64,
    prediction: Option<Var>,
}

fn record_terms(g: &Graph, problem: &dyn Problem, theta: &[f64], cfg: &EnergyConfig) -> Result<Tape> {
    if theta.len() != problem.dim() {
        return Err(Error::shape(
            "energy",
            format!("problem has {} parameters, got {}", problem.dim(), theta.len()),
        ));
    }
    let t = g.leaf(Tensor::vector(theta.to_vec()));
    let rec = problem.record(g, t, &cfg.surrogate)?;
    let mut rest = rec.l_pred;
    let mut omega = 0.0;
    let mut r_dec = 0.0;
    if cfg.omega_kind == OmegaKind::L2 {
        let o = g.scale(g.sum(g.square(t)), 0.5);
        omega = g.scalar(o)?;
        if cfg.gamma != 0.0 {
            rest = g.add(rest, g.scale(o, cfg.gamma))?;
        }
    }
    if cfg.dec_kind == DecKind::QuadraticPenalty {
        let pred = rec.prediction.ok_or_else(|| {
            Error::config("dec_kind = quadratic_penalty needs a problem with a prediction head")
        })?;
        let r = g.scale(g.mean(g.square(pred)), 0.5);
        r_dec = g.scalar(r)?;
        if cfg.lambda != 0.0 {
            rest = g.add(rest, g.scale(r, cfg.lambda))?;
        }
    }
    Ok(Tape {
        theta: t,
        l_pred: rec.l_pred,
        h: rec.h,
        rest,
        omega,
        r_dec,
        prediction: rec.prediction,
    })
}

/// Values and gradients of every term of `F` at one parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub l_pred: f64,
    pub h: f64,
    pub omega: f64,
    pub r_dec: f64,
    /// `L_pred + gamma*Omega + lambda*R_dec`.
    pub rest: f64,
    pub grad_l_pred: Vec<f64>,
    pub grad_h: Vec<f64>,
    pub grad_rest: Vec<f64>,
}

impl Evaluation {
    pub fn energy(&self, beta: f64) -> f64 {
        self.rest + beta * self.h
    }

    pub fn grad_energy(&self, beta: f64) -> Vec<f64> {
        if beta == 0.0 {
            return self.grad_rest.clone();
        }
        self.grad_rest
            .iter()
            .zip(&self.grad_h)
            .map(|(r, h)| r + beta * h)
            .collect()
    }

    pub fn force(&self) -> f64 {
        norm(&self.grad_h)
    }

    pub fn injection(&self) -> f64 {
        -dot(&self.grad_h, &self.grad_rest)
    }

    pub fn dissipation(&self, beta: f64) -> f64 {
        let g = self.force();
        beta * g * g
    }

    pub fn critical_beta(&self) -> Option<f64> {
        let g = self.force();
        (g > FORCE_TOL).then(|| self.injection() / (g * g))
    }
}

pub fn evaluate(problem: &dyn Problem, theta: &[f64], cfg: &EnergyConfig) -> Result<Evaluation> {
    let g = Graph::new();
    let tape = record_terms(&g, problem, theta, cfg)?;
    let grad_l_pred = g.gradient(tape.l_pred, tape.theta)?;
    let grad_h = g.gradient(tape.h, tape.theta)?;
    let grad_rest = if tape.rest == tape.l_pred {
        grad_l_pred.clone()
    } else {
        g.gradient(tape.rest, tape.theta)?
    };
    Ok(Evaluation {
        l_pred: g.scalar(tape.l_pred)?,
        h: g.scalar(tape.h)?,
        omega: tape.omega,
        r_dec: tape.r_dec,
        rest: g.scalar(tape.rest)?,
        grad_l_pred,
        grad_h,
        grad_rest,
    })
}

/// `F = L_pred + beta*H + gamma*Omega + lambda*R_dec`, recorded on one tape.
pub fn energy(problem: &dyn Problem, theta: &[f64], cfg: &EnergyConfig) -> Result<f64> {
    let g = Graph::new();
    let tape = record_terms(&g, problem, theta, cfg)?;
    let f = g.add(tape.rest, g.scale(tape.h, cfg.beta))?;
    g.scalar(f)
}

/// `(||grad H||, grad H)`.
pub fn info_force(problem: &dyn Problem, theta: &[f64], cfg: &EnergyConfig) -> Result<(f64, Vec<f64>)> {
    let g = Graph::new();
    let tape = record_terms(&g, problem, theta, cfg)?;
    let grad_h = g.gradient(tape.h, tape.theta)?;
    Ok((norm(&grad_h), grad_h))
}

/// `sqrt(g^T M^{-1} g)` by an SPD solve.
pub fn metric_force(grad_h: &[f64], metric: &Tensor) -> Result<f64> {
    let x = spd_solve(metric, grad_h)?;
    Ok(dot(grad_h, &x).max(0.0).sqrt())
}

/// Information force measured in the damped Gauss-Newton metric
/// `J^T J + delta I`, `J` the Jacobian of the head output over the batch.
pub fn info_force_metric(
    problem: &dyn Problem,
    theta: &[f64],
    cfg: &EnergyConfig,
    delta: f64,
) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::config(format!("metric damping delta must be > 0, got {delta}")));
    }
    let g = Graph::new();
    let tape = record_terms(&g, problem, theta, cfg)?;
    let grad_h = g.gradient(tape.h, tape.theta)?;
    let p = theta.len();
    let mut m = vec![0.0; p * p];
    if let Some(pred) = tape.prediction {
        let outputs: usize = g.shape(pred).iter().product();
        for k in 0..outputs {
            let yk = g.slice(pred, k, &[1])?;
            let row = g.gradient(yk, tape.theta)?;
            for i in 0..p {
                if row[i] == 0.0 {
                    continue;
                }
                for j in 0..p {
                    m[i * p + j] += row[i] * row[j];
                }
            }
        }
    }
    for i in 0..p {
        m[i * p + i] += delta;
    }
    metric_force(&grad_h, &Tensor::new(vec![p, p], m)?)
}

fn descend(theta: &[f64], grad: &[f64], eta: f64) -> Option<Vec<f64>> {
    let next: Vec<f64> = theta.iter().zip(grad).map(|(t, g)| t - eta * g).collect();
    next.iter().all(|v| v.is_finite()).then_some(next)
}

/// One step `theta - eta * grad F`.
pub fn gd_step(problem: &dyn Problem, theta: &[f64], cfg: &EnergyConfig, eta: f64) -> Result<Vec<f64>> {
    if !(eta > 0.0) {
        return Err(Error::config(format!("eta must be > 0, got {eta}")));
    }
    let ev = evaluate(problem, theta, cfg)?;
    descend(theta, &ev.grad_energy(cfg.beta), eta).ok_or(Error::Divergence {
        step: 0,
        partial: Vec::new(),
    })
}

/// `(I, D)` with `I = -grad H . grad(L_pred + gamma*Omega + lambda*R_dec)` and `D = beta*||grad H||^2`.
pub fn injection_dissipation(problem: &dyn Problem, theta: &[f64], cfg: &EnergyConfig) -> Result<(f64, f64)> {
    let ev = evaluate(problem, theta, cfg)?;
    Ok((ev.injection(), ev.dissipation(cfg.beta)))
}

/// `I / G^2`, or `None` when the force vanishes. May be negative.
pub fn critical_beta(problem: &dyn Problem, theta: &[f64], cfg: &EnergyConfig) -> Result<Option<f64>> {
    Ok(evaluate(problem, theta, cfg)?.critical_beta())
}

/// `||grad H|| / ||grad L_pred||`, or `None` when the loss gradient vanishes.
pub fn degeneracy_ratio(problem: &dyn Problem, theta: &[f64], cfg: &EnergyConfig) -> Result<Option<f64>> {
    let ev = evaluate(problem, theta, cfg)?;
    let gl = norm(&ev.grad_l_pred);
    Ok((gl > FORCE_TOL).then(|| ev.force() / gl))
}

/// One logged step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    #[serde(rename = "L_pred")]
    pub l_pred: f64,
    #[serde(rename = "H")]
    pub h: f64,
    #[serde(rename = "F")]
    pub f: f64,
    #[serde(rename = "G")]
    pub g: f64,
    #[serde(rename = "I_inj")]
    pub i_inj: f64,
    #[serde(rename = "D_diss")]
    pub d_diss: f64,
    pub beta_t: f64,
    /// Zero outside the thermostat loop, which has no reward signal.
    pub r_t: f64,
    pub gen_gap: Option<f64>,
    #[serde(rename = "grad_norm_L")]
    pub grad_norm_l: f64,
    /// `||grad F||`, needed by the descent check.
    #[serde(rename = "grad_norm_F")]
    pub grad_norm_f: f64,
}

impl StepRecord {
    pub fn from_evaluation(t: usize, ev: &Evaluation, beta: f64) -> Self {
        Self {
            t,
            l_pred: ev.l_pred,
            h: ev.h,
            f: ev.energy(beta),
            g: ev.force(),
            i_inj: ev.injection(),
            d_diss: ev.dissipation(beta),
            beta_t: beta,
            r_t: 0.0,
            gen_gap: None,
            grad_norm_l: norm(&ev.grad_l_pred),
            grad_norm_f: norm(&ev.grad_energy(beta)),
        }
    }
}

pub const TRAJECTORY_HEADER: &str =
    "t,L_pred,H,F,G,I_inj,D_diss,beta_t,r_t,gen_gap,grad_norm_L,grad_norm_F";

pub fn write_trajectory_csv<W: Write>(records: &[StepRecord], mut w: W) -> Result<()> {
    writeln!(w, "{TRAJECTORY_HEADER}")?;
    for r in records {
        let gap = r.gen_gap.map(|v| format!("{v:.16e}")).unwrap_or_default();
        writeln!(
            w,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{:.16e},{:.16e}",
            r.t, r.l_pred, r.h, r.f, r.g, r.i_inj, r.d_diss, r.beta_t, r.r_t, gap, r.grad_norm_l, r.grad_norm_f
        )?;
    }
    Ok(())
}

pub fn read_trajectory_csv<R: Read>(r: R) -> Result<Vec<StepRecord>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .map(|row| row.map_err(|e| Error::Table(e.to_string())))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BetaSchedule {
    /// `cfg.beta` throughout.
    Fixed,
    /// The critical coefficient of the current state; the previous value is
    /// kept when it is undefined.
    Critical,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub records: Vec<StepRecord>,
    /// `theta_0 ..= theta_T`.
    pub thetas: Vec<Vec<f64>>,
}

/// `steps` gradient-descent updates, logging the state before each update and
/// after the last one (`steps + 1` records).
pub fn simulate(
    problem: &dyn Problem,
    theta0: &[f64],
    cfg: &EnergyConfig,
    eta: f64,
    steps: usize,
    schedule: BetaSchedule,
) -> Result<Trajectory> {
    if !(eta > 0.0) {
        return Err(Error::config(format!("eta must be > 0, got {eta}")));
    }
    cfg.validate()?;
    let mut theta = theta0.to_vec();
    let mut records = Vec::with_capacity(steps + 1);
    let mut thetas = vec![theta.clone()];
    let mut beta = cfg.beta;
    for t in 0..=steps {
        let ev = evaluate(problem, &theta, cfg)?;
        if schedule == BetaSchedule::Critical {
            beta = ev.critical_beta().unwrap_or(beta);
        }
        let rec = StepRecord::from_evaluation(t, &ev, beta);
        if !rec.f.is_finite() {
            return Err(Error::Divergence { step: t, partial: records });
        }
        records.push(rec);
        if t == steps {
            break;
        }
        match descend(&theta, &ev.grad_energy(beta), eta) {
            Some(next) => theta = next,
            None => return Err(Error::Divergence { step: t, partial: records }),
        }
        thetas.push(theta.clone());
    }
    Ok(Trajectory { records, thetas })
}

/// Gradient descent on `L_pred` alone; returns `theta_0 ..= theta_T`.
pub fn plain_gd(problem: &dyn Problem, theta0: &[f64], eta: f64, steps: usize) -> Result<Vec<Vec<f64>>> {
    let mut out = vec![theta0.to_vec()];
    let surrogate = SurrogateConfig::default();
    for step in 0..steps {
        let g = Graph::new();
        let t = g.leaf(Tensor::vector(out[step].clone()));
        let l = problem.record(&g, t, &surrogate)?.l_pred;
        let grad = g.gradient(l, t)?;
        let next = descend(&out[step], &grad, eta).ok_or(Error::Divergence {
            step,
            partial: Vec::new(),
        })?;
        out.push(next);
    }
    Ok(out)
}

/// `max_t |H_{t+1} - H_t - eta (I_t - D_t)|`.
pub fn entropy_flow_check(records: &[StepRecord], eta: f64) -> f64 {
    records
        .windows(2)
        .map(|w| (w[1].h - w[0].h - eta * (w[0].i_inj - w[0].d_diss)).abs())
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DescentReport {
    /// Every step satisfied `F_{t+1} <= F_t - (eta/2)||grad F_t||^2`.
    pub per_step_holds: bool,
    pub first_violation: Option<usize>,
    /// Smallest `(F_t - F_{t+1}) / (eta ||grad F_t||^2)` over steps with nonzero gradient.
    pub min_decrease_ratio: f64,
    pub min_grad_sq: f64,
    /// `2 (F_0 - F*) / (eta T)`.
    pub bound: f64,
    pub bound_holds: bool,
}

pub fn descent_check(records: &[StepRecord], eta: f64, f_star: f64) -> DescentReport {
    let steps = records.len().saturating_sub(1);
    let mut first_violation = None;
    let mut min_ratio = f64::INFINITY;
    let mut min_grad_sq = f64::INFINITY;
    for (t, w) in records.windows(2).enumerate() {
        let g2 = w[0].grad_norm_f * w[0].grad_norm_f;
        min_grad_sq = min_grad_sq.min(g2);
        let drop = w[0].f - w[1].f;
        let slack = 1e-12 * w[0].f.abs().max(1.0);
        if drop + slack < 0.5 * eta * g2 && first_violation.is_none() {
            first_violation = Some(t);
        }
        if g2 > 0.0 {
            min_ratio = min_ratio.min(drop / (eta * g2));
        }
    }
    let bound = match records.first() {
        Some(r0) if steps > 0 => 2.0 * (r0.f - f_star) / (eta * steps as f64),
        _ => f64::INFINITY,
    };
    DescentReport {
        per_step_holds: first_violation.is_none(),
        first_violation,
        min_decrease_ratio: min_ratio,
        min_grad_sq,
        bound,
        bound_holds: min_grad_sq <= bound * (1.0 + 1e-12),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    Absolute,
    /// `c` multiplies `||grad L_pred||` at the first logged step.
    #[default]
    RelativeToInitialLossGrad,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EffectivenessConfig {
    pub c: f64,
    pub tau: f64,
    pub c_mode: ThresholdMode,
}

impl Default for EffectivenessConfig {
    fn default() -> Self {
        Self {
            c: 0.05,
            tau: 0.5,
            c_mode: ThresholdMode::RelativeToInitialLossGrad,
        }
    }
}

impl EffectivenessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) {
            return Err(Error::config(format!("effectiveness.c must be > 0, got {}", self.c)));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::config(format!("effectiveness.tau must lie in (0, 1], got {}", self.tau)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Effectiveness {
    pub threshold: f64,
    pub fraction: f64,
    pub effective: bool,
}

/// Fraction of logged steps whose force reaches the threshold.
pub fn effectiveness(records: &[StepRecord], ecfg: &EffectivenessConfig) -> Result<Effectiveness> {
    ecfg.validate()?;
    let first = records
        .first()
        .ok_or_else(|| Error::config("effectiveness needs a nonempty trajectory"))?;
    let threshold = match ecfg.c_mode {
        ThresholdMode::Absolute => ecfg.c,
        ThresholdMode::RelativeToInitialLossGrad => ecfg.c * first.grad_norm_l,
    };
    let hits = records.iter().filter(|r| r.g >= threshold).count();
    let fraction = hits as f64 / records.len() as f64;
    Ok(Effectiveness {
        threshold,
        fraction,
        effective: fraction >= ecfg.tau,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenBoundConfig {
    pub a: f64,
    pub b_const: f64,
    pub sigma_subg: f64,
    pub n: usize,
}

impl GenBoundConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0) || !(self.b_const >= 0.0) || !(self.sigma_subg > 0.0) || self.n < 1 {
            return Err(Error::config(format!(
                "gen bound needs a > 0, b_const >= 0, sigma_subg > 0, n >= 1; got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GenBound {
    pub value: f64,
    /// `A*H + B` was negative and was replaced by zero.
    pub clamped: bool,
}

/// `sqrt(2 sigma^2 (A H + B) / n)`.
pub fn gen_bound(h_logdet: f64, cfg: &GenBoundConfig) -> Result<GenBound> {
    cfg.validate()?;
    let info = cfg.a * h_logdet + cfg.b_const;
    let clamped = info < 0.0;
    if clamped {
        log::warn!("A*H + B = {info} < 0; generalization bound clamped to 0");
    }
    let value = (2.0 * cfg.sigma_subg * cfg.sigma_subg * info.max(0.0) / cfg.n as f64).sqrt();
    Ok(GenBound { value, clamped })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EntropyScaling {
    /// Slope of `log H` against `log n`.
    pub alpha_hat: f64,
    /// `(alpha_hat - 1) / 2`, the exponent of the bound in `n`.
    pub gap_exponent: f64,
    /// `alpha_hat < 1`.
    pub vanishing_gap: bool,
    pub excluded: usize,
}

/// Fits `H(n) = C n^alpha` in log-log coordinates.
pub fn entropy_scaling_diag(samples: &[(f64, f64)]) -> Result<EntropyScaling> {
    if let Some(&(n, _)) = samples.iter().find(|(n, _)| !(*n >= 2.0)) {
        return Err(Error::config(format!("sample sizes must be >= 2, got {n}")));
    }
    let usable: Vec<(f64, f64)> = samples
        .iter()
        .filter(|(_, h)| *h > 0.0)
        .map(|&(n, h)| (n.ln(), h.ln()))
        .collect();
    let excluded = samples.len() - usable.len();
    if excluded > 0 {
        log::warn!("{excluded} samples with nonpositive surrogate excluded from the scaling fit");
    }
    if usable.len() < 3 {
        return Err(Error::config(format!(
            "scaling fit needs >= 3 positive samples, got {}",
            usable.len()
        )));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = usable.into_iter().unzip();
    let alpha_hat = least_squares_line(&x, &y)?.slope;
    Ok(EntropyScaling {
        alpha_hat,
        gap_exponent: (alpha_hat - 1.0) / 2.0,
        vanishing_gap: alpha_hat < 1.0,
        excluded,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ForceProbe {
    /// `sup G^2` over the second half of the trajectory.
    pub sup_g2: f64,
    /// 90th percentile of `G^2` over the last quarter.
    pub band: f64,
    pub entry_time: Option<usize>,
    /// Entered the band and never exceeded it by more than 10% afterwards.
    pub entered_band: bool,
}

/// Linear-interpolation percentile, `p` in `[0, 1]`.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = p * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

pub fn force_stabilization_probe(records: &[StepRecord]) -> Result<ForceProbe> {
    let n = records.len();
    if n < 20 {
        return Err(Error::config(format!("force probe needs >= 20 records, got {n}")));
    }
    let g2: Vec<f64> = records.iter().map(|r| r.g * r.g).collect();
    let sup_g2 = g2[n / 2..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let band = percentile(&g2[n - n / 4..], 0.9);
    let entry_time = g2.iter().position(|&v| v <= band);
    let entered_band = entry_time.is_some_and(|t0| g2[t0..].iter().all(|&v| v <= 1.1 * band));
    Ok(ForceProbe {
        sup_g2,
        band,
        entry_time,
        entered_band,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_entropy(dim: usize, l: impl Fn(&Graph, Var) -> Result<Var> + Send + Sync + 'static) -> FunctionalProblem {
        FunctionalProblem::new(dim, l, |g, _| Ok(g.constant(Tensor::scalar(0.0))))
    }

    fn bare(beta: f64) -> EnergyConfig {
        EnergyConfig {
            beta,
            omega_kind: OmegaKind::None,
            ..EnergyConfig::default()
        }
    }

    fn record(t: usize, g: f64) -> StepRecord {
        StepRecord {
            t,
            l_pred: 0.0,
            h: 0.0,
            f: 0.0,
            g,
            i_inj: 0.0,
            d_diss: 0.0,
            beta_t: 0.0,
            r_t: 0.0,
            gen_gap: None,
            grad_norm_l: 1.0,
            grad_norm_f: 0.0,
        }
    }

    #[test]
    fn scalar_energy_example() {
        // L = theta^2, H = theta
        let p = FunctionalProblem::new(
            1,
            |g, t| Ok(g.sum(g.square(t))),
            |g, t| Ok(g.sum(t)),
        );
        assert_eq!(energy(&p, &[1.0], &bare(0.5)).unwrap(), 1.5);
        assert_eq!(energy(&p, &[1.0], &bare(0.0)).unwrap(), 1.0);
    }

    #[test]
    fn omega_adds_half_squared_norm() {
        let p = FunctionalProblem::quadratic(vec![0.0, 0.0], vec![0.0, 0.0]);
        let theta = [1.0, 2.0];
        let base = energy(&p, &theta, &bare(0.0)).unwrap();
        let cfg = EnergyConfig { gamma: 0.3, beta: 0.0, ..EnergyConfig::default() };
        assert!((energy(&p, &theta, &cfg).unwrap() - base - 0.3 * 2.5).abs() < 1e-15);
    }

    #[test]
    fn force_of_half_squared_distance() {
        let p = FunctionalProblem::quadratic(vec![0.0, 0.0], vec![0.0, 0.0]);
        let (g, grad) = info_force(&p, &[3.0, 4.0], &bare(0.0)).unwrap();
        assert_eq!(g, 5.0);
        assert_eq!(grad, vec![3.0, 4.0]);
        let flat = no_entropy(2, |g, t| Ok(g.sum(t)));
        assert_eq!(info_force(&flat, &[3.0, 4.0], &bare(0.0)).unwrap().0, 0.0);
    }

    #[test]
    fn metric_force_scaling_and_identity() {
        let grad = [3.0, 4.0];
        assert!((metric_force(&grad, &Tensor::identity(2)).unwrap() - 5.0).abs() < 1e-14);
        let four = Tensor::from_rows(&[vec![4.0, 0.0], vec![0.0, 4.0]]).unwrap();
        assert!((metric_force(&grad, &four).unwrap() - 2.5).abs() < 1e-14);
        // no head: J = 0, delta = 1 is the identity metric
        let p = FunctionalProblem::quadratic(vec![0.0, 0.0], vec![0.0, 0.0]);
        let m = info_force_metric(&p, &[3.0, 4.0], &bare(0.0), 1.0).unwrap();
        assert!((m - 5.0).abs() < 1e-14);
    }

    #[test]
    fn gd_step_examples() {
        let half_sq = no_entropy(1, |g, t| Ok(g.scale(g.sum(g.square(t)), 0.5)));
        assert_eq!(gd_step(&half_sq, &[1.0], &bare(0.0), 0.1).unwrap(), vec![0.9]);
        assert_eq!(gd_step(&half_sq, &[0.0], &bare(0.0), 0.1).unwrap(), vec![0.0]);
        let traj = simulate(&half_sq, &[1.0], &bare(0.0), 0.1, 20, BetaSchedule::Fixed).unwrap();
        for (t, th) in traj.thetas.iter().enumerate() {
            assert!((th[0] - 0.9f64.powi(t as i32)).abs() < 1e-15);
        }
    }

    #[test]
    fn injection_dissipation_and_critical_beta() {
        let p = FunctionalProblem::quadratic(vec![2.0, 0.0], vec![0.0, 0.0]);
        assert_eq!(injection_dissipation(&p, &[1.0, 0.0], &bare(1.0)).unwrap(), (1.0, 1.0));
        assert_eq!(critical_beta(&p, &[1.0, 0.0], &bare(1.0)).unwrap(), Some(1.0));
        assert_eq!(injection_dissipation(&p, &[1.0, 0.0], &bare(0.0)).unwrap().1, 0.0);
        assert_eq!(critical_beta(&p, &[0.0, 0.0], &bare(1.0)).unwrap(), None);
        // grad H = (0, 1) is orthogonal to grad L = (-2, 0)
        let p = FunctionalProblem::quadratic(vec![2.0, 1.0], vec![0.0, 0.0]);
        assert_eq!(critical_beta(&p, &[0.0, 1.0], &bare(1.0)).unwrap(), Some(0.0));
    }

    #[test]
    fn beta_zero_matches_plain_descent_bitwise() {
        let p = FunctionalProblem::quadratic(vec![2.0, -1.0], vec![0.5, 0.5]);
        let traj = simulate(&p, &[1.0, 1.0], &bare(0.0), 0.05, 50, BetaSchedule::Fixed).unwrap();
        assert_eq!(traj.thetas, plain_gd(&p, &[1.0, 1.0], 0.05, 50).unwrap());
    }

    #[test]
    fn trajectory_csv_round_trips() {
        let p = FunctionalProblem::quadratic(vec![2.0, -1.0], vec![0.5, 0.5]);
        let mut traj = simulate(&p, &[1.0, 1.0], &bare(0.3), 0.05, 5, BetaSchedule::Fixed).unwrap();
        traj.records[2].gen_gap = Some(0.125);
        let mut buf = Vec::new();
        write_trajectory_csv(&traj.records, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,L_pred,H,F,G,I_inj,D_diss,beta_t,r_t,gen_gap,grad_norm_L"));
        assert_eq!(read_trajectory_csv(&buf[..]).unwrap(), traj.records);
    }

    #[test]
    fn descent_check_examples() {
        let l = 4.0;
        let p = no_entropy(1, move |g, t| Ok(g.scale(g.sum(g.square(t)), l / 2.0)));
        let eta = 1.0 / (2.0 * l);
        let traj = simulate(&p, &[1.0], &bare(0.0), eta, 30, BetaSchedule::Fixed).unwrap();
        let rep = descent_check(&traj.records, eta, 0.0);
        assert!(rep.per_step_holds && rep.bound_holds);
        assert!((rep.min_decrease_ratio - (1.0 - l * eta / 2.0)).abs() < 1e-9);

        let eta = 2.5 / l;
        let traj = simulate(&p, &[1.0], &bare(0.0), eta, 10, BetaSchedule::Fixed).unwrap();
        let rep = descent_check(&traj.records, eta, 0.0);
        assert!(!rep.per_step_holds);
        assert_eq!(rep.first_violation, Some(0));
    }

    #[test]
    fn descent_bound_arithmetic() {
        let mut recs: Vec<StepRecord> = (0..=100).map(|t| record(t, 0.0)).collect();
        recs[0].f = 1.0;
        let rep = descent_check(&recs, 0.1, 0.0);
        assert!((rep.bound - 0.2).abs() < 1e-15);
    }

    #[test]
    fn effectiveness_examples() {
        let recs: Vec<StepRecord> = [1.0, 1.0, 1.0, 0.0, 0.0]
            .iter()
            .enumerate()
            .map(|(t, &g)| record(t, g))
            .collect();
        let abs = |c| EffectivenessConfig { c, tau: 0.5, c_mode: ThresholdMode::Absolute };
        let e = effectiveness(&recs, &abs(0.5)).unwrap();
        assert_eq!(e.fraction, 0.6);
        assert!(e.effective);
        assert!(!effectiveness(&recs, &abs(2.0)).unwrap().effective);
        let zeros: Vec<StepRecord> = (0..4).map(|t| record(t, 0.0)).collect();
        assert_eq!(effectiveness(&zeros, &abs(1e-9)).unwrap().fraction, 0.0);
        // relative mode scales by the first logged loss gradient
        let mut rel = recs.clone();
        rel[0].grad_norm_l = 10.0;
        let e = effectiveness(&rel, &EffectivenessConfig { c: 0.05, ..Default::default() }).unwrap();
        assert_eq!(e.threshold, 0.5);
        assert!(effectiveness(&[], &abs(1.0)).is_err());
    }

    #[test]
    fn degeneracy_ratio_examples() {
        let flat = no_entropy(2, |g, t| half_sq_dist(g, t, &[1.0, 2.0]));
        assert_eq!(degeneracy_ratio(&flat, &[0.0, 0.0], &bare(0.0)).unwrap(), Some(0.0));
        let aliased = FunctionalProblem::quadratic(vec![1.0, 2.0], vec![1.0, 2.0]);
        assert_eq!(degeneracy_ratio(&aliased, &[0.0, 0.0], &bare(0.0)).unwrap(), Some(1.0));
        assert_eq!(degeneracy_ratio(&aliased, &[1.0, 2.0], &bare(0.0)).unwrap(), None);
    }

    #[test]
    fn gen_bound_examples() {
        let cfg = GenBoundConfig { a: 1.0, b_const: 0.0, sigma_subg: 1.0, n: 8 };
        let b = gen_bound(2.0, &cfg).unwrap();
        assert!((b.value - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(!b.clamped);
        assert_eq!(gen_bound(0.0, &cfg).unwrap().value, 0.0);
        let neg = gen_bound(-1.0, &cfg).unwrap();
        assert_eq!((neg.value, neg.clamped), (0.0, true));
        let four = GenBoundConfig { n: 32, ..cfg.clone() };
        assert!((gen_bound(2.0, &four).unwrap().value - b.value / 2.0).abs() < 1e-15);
        assert!(gen_bound(1.0, &GenBoundConfig { n: 0, ..cfg }).is_err());
    }

    #[test]
    fn entropy_scaling_examples() {
        let sqrt: Vec<(f64, f64)> = [4.0, 16.0, 64.0].iter().map(|&n: &f64| (n, n.sqrt())).collect();
        let d = entropy_scaling_diag(&sqrt).unwrap();
        assert!((d.alpha_hat - 0.5).abs() < 1e-12);
        assert!((d.gap_exponent + 0.25).abs() < 1e-12);
        assert!(d.vanishing_gap);
        let flat = [(4.0, 2.0), (16.0, 2.0), (64.0, 2.0)];
        assert!(entropy_scaling_diag(&flat).unwrap().alpha_hat.abs() < 1e-12);
        let linear = [(4.0, 12.0), (16.0, 48.0), (64.0, 192.0)];
        let d = entropy_scaling_diag(&linear).unwrap();
        assert!((d.alpha_hat - 1.0).abs() < 1e-12);
        assert!(!d.vanishing_gap);
        let with_bad = [(4.0, 2.0), (8.0, -1.0), (16.0, 2.0), (64.0, 2.0)];
        assert_eq!(entropy_scaling_diag(&with_bad).unwrap().excluded, 1);
        assert!(entropy_scaling_diag(&[(4.0, 1.0), (8.0, 1.0)]).is_err());
    }

    #[test]
    fn force_probe_examples() {
        let decreasing: Vec<StepRecord> = (0..40).map(|t| record(t, 1.0 / (1.0 + t as f64))).collect();
        assert!(force_stabilization_probe(&decreasing).unwrap().entered_band);
        let constant: Vec<StepRecord> = (0..40).map(|t| record(t, 0.7)).collect();
        let p = force_stabilization_probe(&constant).unwrap();
        assert!(p.entered_band);
        assert!((p.band - 0.49).abs() < 1e-15);
        assert_eq!(p.entry_time, Some(0));
        let mut spike = constant.clone();
        spike[35].g = 2.0;
        assert!(!force_stabilization_probe(&spike).unwrap().entered_band);
        assert!(force_stabilization_probe(&constant[..10]).is_err());
    }

    #[test]
    fn percentile_interpolates() {
        assert_eq!(percentile(&[3.0, 1.0, 2.0], 0.5), 2.0);
        assert!((percentile(&[0.0, 10.0], 0.9) - 9.0).abs() < 1e-15);
    }
}
