//! The acceptance suite: twelve property and regime checks, each with a
//! tolerance and a wall-clock budget.

use std::fmt;
use std::path::Path;
use std::time::{Duration, Instant};

use hclm_core::dynamics::{
    descent_check, effectiveness, energy, entropy_flow_check, entropy_scaling_diag, evaluate,
    force_stabilization_probe, gen_bound, half_sq_dist, plain_gd, simulate, BetaSchedule, DecKind,
    EffectivenessConfig, EnergyConfig, FunctionalProblem, GenBoundConfig, ModelProblem, OmegaKind,
};
use hclm_core::models::{generate_task, init_params, Activation, EncoderKind, EncoderSpec, TaskKind, TaskSpec};
use hclm_core::numerics::{finite_diff_grad, relative_error, rng, Graph, Tensor, Var};
use hclm_core::surrogates::{SurrogateConfig, SurrogateKind};
use hclm_core::thermostat::{sweep, RunConfig, SweepResult, ThermoMode};
use hclm_langevin::{
    entropy_production_terms, fp_run, stability_limit, stationary_variance_check, DensityGrid, DissipationReport,
    DoubleWell, Potential, Quadratic,
};
use hclm_scaling_memory::{excess_loss, fit_power_law, memory_trial, MemoryProtocol, ScalingModel};
use rand::Rng as _;

use crate::error::Result;

/// `(name, budget in seconds)` for criteria 1..=12.
pub const CRITERIA: [(&str, u64); 12] = [
    ("gradient oracle", 30),
    ("descent and stationarity", 10),
    ("entropy-flow identity", 10),
    ("critical beta", 5),
    ("degenerate collapse", 5),
    ("generalization bound", 5),
    ("fokker-planck", 60),
    ("langevin stationarity", 60),
    ("scaling fit", 10),
    ("associative memory", 60),
    ("regime sweep", 600),
    ("force stabilization", 5),
];

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub id: usize,
    pub name: &'static str,
    /// The property held and the run finished inside its budget.
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
    pub budget: Duration,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] criterion {:>2} {:<26} {:>8.2}s / {:>4}s  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.elapsed.as_secs_f64(),
            self.budget.as_secs(),
            self.detail
        )
    }
}

/// Options for the checks that can parallelize or emit artifacts.
#[derive(Clone, Debug, Default)]
pub struct CheckOptions<'a> {
    pub jobs: usize,
    /// Where the regime sweep writes its summary and plots.
    pub artifact_dir: Option<&'a Path>,
}

/// Runs criterion `id` (1..=12).
pub fn run_criterion(id: usize, opts: &CheckOptions) -> CheckOutcome {
    assert!((1..=12).contains(&id), "criterion ids are 1..=12");
    let (name, budget) = CRITERIA[id - 1];
    let start = Instant::now();
    let result = match id {
        1 => gradient_oracle(),
        2 => descent_and_stationarity(),
        3 => entropy_flow(),
        4 => critical_beta(),
        5 => degenerate_collapse(),
        6 => generalization_bound(),
        7 => fokker_planck(),
        8 => langevin_stationarity(),
        9 => scaling_fit(),
        10 => associative_memory(),
        11 => regime_sweep(opts),
        _ => force_stabilization(),
    };
    let elapsed = start.elapsed();
    let budget = Duration::from_secs(budget);
    let (ok, mut detail) = result.unwrap_or_else(|e| (false, format!("error: {e}")));
    if ok && elapsed > budget {
        detail.push_str("; over time budget");
    }
    CheckOutcome {
        id,
        name,
        passed: ok && elapsed <= budget,
        detail,
        elapsed,
        budget,
    }
}

pub fn run_all(opts: &CheckOptions) -> Vec<CheckOutcome> {
    (1..=12).map(|id| run_criterion(id, opts)).collect()
}

type Verdict = Result<(bool, String)>;

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub configs: usize,
    pub max_rel_err: f64,
    /// Description of the configuration with the largest error.
    pub worst: String,
}

/// Reverse-mode energy gradients against central differences on `n` random
/// models. Surrogates and encoders are cycled so every pairing appears.
pub fn gradient_suite(seed: u64, n: usize, fd_step: f64) -> Result<GradReport> {
    let mut r = rng::stream(seed, 11);
    let mut report = GradReport {
        configs: n,
        max_rel_err: 0.0,
        worst: String::new(),
    };
    for i in 0..n {
        let surrogate = SurrogateKind::ALL[i % 3];
        let kind = if (i / 3) % 2 == 0 { EncoderKind::Mlp } else { EncoderKind::Attn1 };
        let task_kind = if r.random::<bool>() { TaskKind::RegressionLowrank } else { TaskKind::ClassifyGaussians };
        let seq_len = r.random_range(2..=3);
        let input_dim = match kind {
            EncoderKind::Mlp => r.random_range(3..=6),
            EncoderKind::Attn1 => seq_len * r.random_range(2..=3),
        };
        let hidden_dims: Vec<usize> = (0..r.random_range(0..=2)).map(|_| r.random_range(2..=6)).collect();
        let rep_dim = r.random_range(2..=4);
        let task = TaskSpec {
            kind: task_kind,
            n_train: 2 * rep_dim + r.random_range(0..=4),
            n_test: 2,
            n_val: 2,
            input_dim,
            rank: 1,
            n_outputs: r.random_range(1..=2),
            n_classes: r.random_range(2..=4),
            seed: r.random(),
            ..TaskSpec::default()
        };
        let encoder = EncoderSpec {
            kind,
            input_dim,
            hidden_dims,
            rep_dim,
            output_dim: task.output_dim(),
            activation: Activation::Tanh,
            seq_len,
        };
        let cfg = EnergyConfig {
            beta: r.random_range(0.0..2.0),
            gamma: r.random_range(0.0..0.5),
            lambda: r.random_range(0.0..0.5),
            surrogate: SurrogateConfig {
                kind: surrogate,
                epsilon: 10f64.powf(r.random_range(-3.0..-1.0)),
                sigma_xi: r.random_range(0.0..0.3),
            },
            omega_kind: OmegaKind::L2,
            dec_kind: DecKind::QuadraticPenalty,
        };
        let problem = ModelProblem {
            encoder: encoder.clone(),
            kind: task_kind,
            batch: generate_task(&task)?.train,
            noise_seed: r.random(),
        };
        let theta = init_params(&encoder, r.random());
        let analytic = evaluate(&problem, &theta, &cfg)?.grad_energy(cfg.beta);
        let fd = finite_diff_grad(|t| energy(&problem, t.data(), &cfg), &Tensor::vector(theta), fd_step)?;
        let err = relative_error(&analytic, fd.data(), 1e-12);
        if !(err <= report.max_rel_err) {
            report.max_rel_err = err;
            report.worst = format!(
                "#{i} {kind:?}/{task_kind:?}/{surrogate} p={rep_dim} B={} params={}",
                task.n_train,
                encoder.param_count()
            );
        }
    }
    Ok(report)
}

fn gradient_oracle() -> Verdict {
    let rep = gradient_suite(0, 100, 1e-5)?;
    Ok((
        rep.max_rel_err <= 1e-5,
        format!("max rel err {:.2e} over {} configs (worst {})", rep.max_rel_err, rep.configs, rep.worst),
    ))
}

fn bare(beta: f64) -> EnergyConfig {
    EnergyConfig {
        beta,
        omega_kind: OmegaKind::None,
        ..EnergyConfig::default()
    }
}

/// `L = sum_i c_i (theta_i - b_i)^2 / 2`, `H = ||theta - a||^2 / 2`.
fn diag_quadratic(c: Vec<f64>, b: Vec<f64>, a: Vec<f64>) -> FunctionalProblem {
    let dim = c.len();
    FunctionalProblem::new(
        dim,
        move |g: &Graph, t: Var| {
            let d = g.sub(t, g.constant(Tensor::vector(b.clone())))?;
            let w = g.constant(Tensor::vector(c.iter().map(|v| v / 2.0).collect()));
            g.inner(g.square(d), w)
        },
        move |g, t| half_sq_dist(g, t, &a),
    )
}

fn descent_and_stationarity() -> Verdict {
    let mut worst_use: f64 = 0.0;
    let mut failures = Vec::new();
    for seed in 0..50u64 {
        let mut r = rng::stream(seed, 12);
        let dim = 3;
        let c: Vec<f64> = (0..dim).map(|_| r.random_range(0.1..3.0)).collect();
        let b = rng::normal_vec(&mut r, dim, 1.0);
        let a = rng::normal_vec(&mut r, dim, 1.0);
        let beta = r.random_range(0.0..1.0);
        let smooth = c.iter().copied().fold(0.0, f64::max) + beta;
        let eta = r.random_range(0.1..0.99) / (2.0 * smooth);
        // per-coordinate minimum of c (x - b)^2 / 2 + beta (x - a)^2 / 2
        let f_star: f64 = (0..dim)
            .map(|i| 0.5 * c[i] * beta / (c[i] + beta) * (b[i] - a[i]).powi(2))
            .sum();
        let theta0 = rng::normal_vec(&mut r, dim, 2.0);
        let p = diag_quadratic(c, b, a);
        let traj = simulate(&p, &theta0, &bare(beta), eta, 100, BetaSchedule::Fixed)?;
        let rep = descent_check(&traj.records, eta, f_star);
        worst_use = worst_use.max(rep.min_grad_sq / rep.bound);
        if !(rep.per_step_holds && rep.bound_holds) {
            failures.push(seed);
        }
    }
    Ok((
        failures.is_empty(),
        format!("50 runs; largest min|grad F|^2 / bound = {worst_use:.2e}; failing seeds {failures:?}"),
    ))
}

fn entropy_flow() -> Verdict {
    let problems = [
        (diag_quadratic(vec![1.0, 1.0], vec![2.0, 0.0], vec![0.0, 0.0]), vec![1.0, 1.0], 0.5),
        (diag_quadratic(vec![1.0, 3.0], vec![1.0, -2.0], vec![0.5, -1.0]), vec![-1.0, 2.0], 0.8),
    ];
    let mut ok = true;
    let mut ratios = Vec::new();
    for (p, theta0, beta) in &problems {
        let residual = |eta: f64| -> Result<f64> {
            let traj = simulate(p, theta0, &bare(*beta), eta, 100, BetaSchedule::Fixed)?;
            Ok(entropy_flow_check(&traj.records, eta))
        };
        let eta = 1e-3;
        let ratio = residual(eta)? / residual(eta / 2.0)?;
        ok &= (3.5..=4.5).contains(&ratio);
        ratios.push(format!("{ratio:.4}"));
    }
    Ok((ok, format!("residual ratios under eta halving: {}", ratios.join(", "))))
}

fn critical_beta() -> Verdict {
    let p = diag_quadratic(vec![1.0, 1.0], vec![3.0, 1.0], vec![0.0, 0.0]);
    let eta = 1e-2;
    let traj = simulate(&p, &[1.0, 1.0], &bare(0.0), eta, 100, BetaSchedule::Critical)?;
    let max_dh = traj.records.windows(2).map(|w| (w[1].h - w[0].h).abs()).fold(0.0, f64::max);
    Ok((
        max_dh <= 10.0 * eta * eta,
        format!("max |dH| = {max_dh:.3e} vs 10 eta^2 = {:.1e}, beta_c(0) = {}", 10.0 * eta * eta, traj.records[0].beta_t),
    ))
}

fn degenerate_collapse() -> Verdict {
    let task = TaskSpec {
        n_train: 64,
        seed: 3,
        ..TaskSpec::default()
    };
    let encoder = EncoderSpec::default();
    let batch = generate_task(&task)?.train;
    let model = ModelProblem {
        encoder: encoder.clone(),
        kind: task.kind,
        batch: batch.clone(),
        noise_seed: 3,
    };
    let theta = init_params(&encoder, 3);
    let eta = 0.05;
    let steps = 50;
    let plain = plain_gd(&model, &theta, eta, steps)?;
    let mut bitwise = true;
    for kind in SurrogateKind::ALL {
        let mut cfg = bare(0.0);
        cfg.surrogate.kind = kind;
        bitwise &= simulate(&model, &theta, &cfg, eta, steps, BetaSchedule::Fixed)?.thetas == plain;
    }

    let spec = encoder.clone();
    let kind = task.kind;
    let constant_h = FunctionalProblem::new(
        encoder.param_count(),
        move |g, t| {
            let x = g.constant(batch.x.clone());
            let y = g.constant(batch.y.clone());
            let (_, yhat) = hclm_core::models::forward(g, t, x, &spec)?;
            hclm_core::models::pred_loss(g, yhat, y, kind)
        },
        |g, _| Ok(g.constant(Tensor::scalar(2.5))),
    );
    let plain_h = plain_gd(&constant_h, &theta, eta, steps)?;
    let mut max_dev: f64 = 0.0;
    for beta in [0.1, 1.0, 10.0] {
        let traj = simulate(&constant_h, &theta, &bare(beta), eta, steps, BetaSchedule::Fixed)?;
        for (a, b) in traj.thetas.iter().zip(&plain_h) {
            max_dev = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(max_dev, f64::max);
        }
    }
    Ok((
        bitwise && max_dev <= 1e-12,
        format!("beta=0 bitwise equal: {bitwise}; constant-H max deviation {max_dev:.1e}"),
    ))
}

fn generalization_bound() -> Verdict {
    let mut r = rng::stream(0, 13);
    let mut max_err: f64 = 0.0;
    for _ in 0..1000 {
        let h = r.random_range(0.0..20.0);
        let cfg = GenBoundConfig {
            a: r.random_range(0.01..5.0),
            b_const: r.random_range(0.0..5.0),
            sigma_subg: r.random_range(0.01..5.0),
            n: r.random_range(1..100_000),
        };
        let exact = (2.0 * cfg.sigma_subg.powi(2) * (cfg.a * h + cfg.b_const) / cfg.n as f64).sqrt();
        let v = gen_bound(h, &cfg)?.value;
        max_err = max_err.max((v - exact).abs() / exact.max(1.0));
    }
    let mut alpha_err: f64 = 0.0;
    for alpha in [0.3, 0.5, 0.9, 1.0, 1.4] {
        let samples: Vec<(f64, f64)> = (1..=10).map(|k| 2f64.powi(k)).map(|n| (n, 1.7 * n.powf(alpha))).collect();
        alpha_err = alpha_err.max((entropy_scaling_diag(&samples)?.alpha_hat - alpha).abs());
    }
    Ok((
        max_err <= 1e-12 && alpha_err <= 1e-10,
        format!("bound max error {max_err:.1e} over 1000 tuples; alpha recovery error {alpha_err:.1e}"),
    ))
}

fn bump(c: f64, s: f64) -> impl Fn(f64) -> f64 {
    move |x| (-(x - c) * (x - c) / (2.0 * s * s)).exp()
}

fn fokker_planck() -> Verdict {
    let (lo, hi, m) = (-4.0, 4.0, 160);
    let dw = DoubleWell::default();
    let start = DensityGrid::from_fn(-3.0, 3.0, 200, bump(1.0, 0.7))?;
    let dt = 0.5 * stability_limit(&start, &dw, 0.5)?;
    let (end, rows) = fp_run(&start, &dw, 0.5, dt, 10_000, 100)?;
    let mass_err = rows
        .iter()
        .map(|r| (r.mass - 1.0).abs())
        .fold((end.mass() - 1.0).abs(), f64::max);

    let quad = Quadratic::default();
    let pots: [&dyn Potential; 2] = [&quad, &dw];
    let mut dissipative = true;
    let mut worst_uphill = f64::NEG_INFINITY;
    for pot in pots {
        let ics = [
            DensityGrid::from_fn(lo, hi, m, bump(1.0, 0.3))?,
            DensityGrid::from_fn(lo, hi, m, bump(-1.5, 0.5))?,
            DensityGrid::from_fn(lo, hi, m, |x| bump(-1.0, 0.2)(x) + 0.5 * bump(1.2, 0.4)(x))?,
            DensityGrid::from_fn(lo, hi, m, |x| if x.abs() < 2.0 { 1.0 } else { 1e-6 })?,
            DensityGrid::from_fn(lo, hi, m, bump(0.0, 1.5))?,
        ];
        for g in ics {
            let dt = 0.5 * stability_limit(&g, pot, 1.0)?;
            let (_, rows) = fp_run(&g, pot, 1.0, dt, 2000, 1)?;
            let e: Vec<f64> = rows.iter().map(|r| r.free_energy).collect();
            let rep = DissipationReport::from_energies(&e);
            worst_uphill = worst_uphill.max(rep.max_uphill);
            dissipative &= rep.passes(dt);
        }
    }

    let gibbs = DensityGrid::gibbs(-8.0, 8.0, 400, &quad, 1.0)?;
    let (drift, diffusion) = entropy_production_terms(&gibbs, &quad, 1.0);
    let terms_ok = (drift + 1.0).abs() <= 1e-2 && (diffusion - 1.0).abs() <= 1e-2;
    Ok((
        mass_err <= 1e-9 && dissipative && terms_ok,
        format!(
            "mass drift {mass_err:.1e}; max free-energy rise {worst_uphill:.1e}; stationary terms ({drift:.5}, {diffusion:.5})"
        ),
    ))
}

fn langevin_stationarity() -> Verdict {
    let var = stationary_variance_check(0.5, 1e-3, 5000, 100_000, 0)?;
    Ok(((var - 0.5).abs() <= 0.01, format!("sample variance {var:.5}")))
}

fn scaling_fit() -> Verdict {
    let scales: Vec<f64> = (0..20).map(|k| 4.0 * 1.4f64.powi(k)).collect();
    let mut r = rng::stream(0, 14);
    let mut exact_err: f64 = 0.0;
    for _ in 0..50 {
        let m = ScalingModel {
            a: r.random_range(0.1..3.0),
            b: r.random_range(0.1..3.0),
            alpha: r.random_range(0.0..2.0),
            gamma_exp: r.random_range(0.0..2.0),
            q: r.random_range(0.1..2.0),
            l_inf: 0.0,
        };
        let samples = scales.iter().map(|&s| Ok((s, excess_loss(s, &m)?))).collect::<Result<Vec<_>>>()?;
        exact_err = exact_err.max((fit_power_law(&samples)?.kappa_hat - m.kappa()).abs());
    }

    let m = ScalingModel::default();
    let mut noisy_err: f64 = 0.0;
    for seed in 0..100 {
        let mut r = rng::stream(seed, 15);
        let samples = scales
            .iter()
            .map(|&s| Ok((s, excess_loss(s, &m)? * (1.0 + 0.01 * rng::standard_normal(&mut r)))))
            .collect::<Result<Vec<_>>>()?;
        noisy_err = noisy_err.max((fit_power_law(&samples)?.kappa_hat - m.kappa()).abs());
    }

    let mut flips = true;
    for (alpha, expect) in [(0.3, std::cmp::Ordering::Greater), (0.5, std::cmp::Ordering::Equal), (0.7, std::cmp::Ordering::Less)] {
        let m = ScalingModel { alpha, gamma_exp: 0.5, ..ScalingModel::default() };
        let v = scales.iter().map(|&s| excess_loss(s, &m)).collect::<std::result::Result<Vec<_>, _>>()?;
        flips &= v.windows(2).all(|w| w[1].partial_cmp(&w[0]) == Some(expect));
    }
    Ok((
        exact_err <= 1e-10 && noisy_err <= 0.02 && flips,
        format!("noiseless |dkappa| {exact_err:.1e}; 1% noise max |dkappa| {noisy_err:.4}; monotonicity flip at alpha=gamma: {flips}"),
    ))
}

fn associative_memory() -> Verdict {
    let proto = MemoryProtocol::default();
    let mut retrieved = 0;
    let mut transients = 0;
    for seed in 0..50 {
        if memory_trial(0.05, seed, &proto)?.m_final >= 0.95 {
            retrieved += 1;
        }
        let t = memory_trial(0.3, seed, &proto)?;
        if t.m_max >= 0.8 && t.m_final < 0.3 {
            transients += 1;
        }
    }
    Ok((
        retrieved as f64 >= 0.95 * 50.0 && transients > 0,
        format!("P/N=0.05 retrieved {retrieved}/50; P/N=0.3 transient recoveries {transients}/50"),
    ))
}

pub const REGIME_BETAS: [f64; 5] = [0.01, 0.03, 0.1, 0.3, 1.0];

/// The full beta x surrogate x mode grid on the default classification run.
pub fn regime_grid(jobs: usize) -> Result<(RunConfig, SweepResult)> {
    let base = RunConfig::default();
    let res = sweep(
        &base,
        &REGIME_BETAS,
        &SurrogateKind::ALL,
        &ThermoMode::ALL,
        &EffectivenessConfig::default(),
        jobs,
    )?;
    Ok((base, res))
}

/// Assertions (a)-(c) on a finished regime grid.
pub fn regime_verdict(base: &RunConfig, res: &SweepResult) -> (bool, String) {
    let mut failed: Vec<String> = res
        .cells
        .iter()
        .filter_map(|c| c.outcome.as_ref().err().map(|e| format!("cell {:?}: {e}", (c.beta_index, c.surrogate_index, c.mode_index))))
        .collect();
    let row = |beta: f64, s: SurrogateKind, m: ThermoMode| {
        res.summary.iter().find(|r| r.beta == beta && r.surrogate == s && r.mode == m)
    };
    let mut force_ok = true;
    let mut min_margin = f64::INFINITY;
    for &beta in &REGIME_BETAS {
        for mode in ThermoMode::ALL {
            match (row(beta, SurrogateKind::LogDet, mode), row(beta, SurrogateKind::Softmax, mode)) {
                (Some(l), Some(s)) => {
                    force_ok &= l.mean_g > s.mean_g;
                    min_margin = min_margin.min(l.mean_g / s.mean_g);
                }
                _ => force_ok = false,
            }
        }
    }
    let (lo, hi) = (base.thermo.beta_min, base.thermo.beta_max);
    let mut thermo_ok = true;
    let mut effective_ok = true;
    for c in &res.cells {
        let Ok(out) = &c.outcome else { continue };
        if c.config.thermo.mode != ThermoMode::Fixed {
            let b: Vec<f64> = out.records.iter().map(|r| r.beta_t).collect();
            let bounded = b.iter().all(|v| (lo..=hi).contains(v));
            let moving = b.iter().any(|&v| v != b[0]);
            thermo_ok &= bounded && moving;
        }
        if c.config.energy.surrogate.kind == SurrogateKind::LogDet && c.config.thermo.beta0 > 0.0 {
            let e = effectiveness(&out.records, &EffectivenessConfig::default());
            effective_ok &= e.is_ok_and(|e| e.effective);
        }
    }
    if !force_ok {
        failed.push("logdet force not above softmax in every matched cell".into());
    }
    (
        failed.is_empty() && thermo_ok && effective_ok,
        format!(
            "{} cells; (a) logdet/softmax mean G min ratio {min_margin:.2}; (b) thermostat traces bounded and moving: {thermo_ok}; (c) logdet runs effective: {effective_ok}{}",
            res.cells.len(),
            if failed.is_empty() { String::new() } else { format!("; {}", failed.join("; ")) }
        ),
    )
}

fn regime_sweep(opts: &CheckOptions) -> Verdict {
    let (base, res) = regime_grid(opts.jobs.max(1))?;
    if let Some(dir) = opts.artifact_dir {
        crate::commands::write_sweep_outputs(dir, &res, true)?;
    }
    Ok(regime_verdict(&base, &res))
}

fn force_stabilization() -> Verdict {
    let mut ok = true;
    let mut entries = Vec::new();
    for beta in [0.1, 0.5, 1.0] {
        let p = FunctionalProblem::quadratic(vec![2.0, -1.0], vec![0.0, 0.0]);
        let traj = simulate(&p, &[-1.0, 3.0], &bare(beta), 0.05, 200, BetaSchedule::Fixed)?;
        let probe = force_stabilization_probe(&traj.records)?;
        ok &= probe.entered_band;
        entries.push(format!("beta={beta}: entry t={:?}", probe.entry_time));
    }
    Ok((ok, entries.join(", ")))
}
