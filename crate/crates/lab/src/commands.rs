//! One function per subcommand. Each writes `resolved_config.json` and its
//! data files into `<output_dir>/<command>/<tag>/` and returns that directory.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use hclm_core::dynamics::{effectiveness, read_trajectory_csv, write_trajectory_csv, StepRecord};
use hclm_core::numerics::rng;
use hclm_core::thermostat::{run_er_hclm, sweep, write_summary_csv, SweepResult};
use hclm_core::Error as CoreError;
use hclm_langevin::{
    fp_run, free_energy, free_energy_particles, histogram, run_langevin, stability_limit, write_run_csv, DensityGrid,
    ParticleEnsemble, PotentialSpec,
};
use hclm_scaling_memory::{
    empirical_ratio_trace, excess_loss, fit_power_law, memory_trial, write_memory_csv, write_scaling_csv, MemoryTrial,
};
use serde::Serialize;
use serde_json::json;

use crate::checks::{gradient_suite, run_all, CheckOptions};
use crate::config::{to_json, ExperimentConfig, InitialDensity};
use crate::error::{LabError, Result};
use crate::plot::{emit_plot, Plot, Series};

/// Creates the run directory and records the configuration that produced it.
pub fn prepare_run_dir(cfg: &ExperimentConfig, command: &str) -> Result<PathBuf> {
    let dir = cfg.run_dir(command);
    fs::create_dir_all(&dir)
        .map_err(|e| LabError::invalid(format!("cannot create output directory {}: {e}", dir.display())))?;
    fs::write(dir.join("resolved_config.json"), to_json(cfg)?)?;
    Ok(dir)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| LabError::invalid(format!("cannot write {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn plot(title: &str, x_label: &str, y_label: &str, series: Vec<Series>) -> Plot {
    Plot {
        title: title.into(),
        x_label: x_label.into(),
        y_label: y_label.into(),
        log_x: false,
        log_y: false,
        series,
    }
}

fn trajectory_plots(dir: &Path, records: &[StepRecord]) -> Result<()> {
    let t = |f: fn(&StepRecord) -> f64| records.iter().map(|r| (r.t as f64, f(r))).collect::<Vec<_>>();
    emit_plot(
        &plot("Loss and energy", "step", "value", vec![Series::new("L_pred", t(|r| r.l_pred)), Series::new("F", t(|r| r.f))]),
        &dir.join("loss.svg"),
    )?;
    emit_plot(&plot("Information force", "step", "G", vec![Series::new("G", t(|r| r.g))]), &dir.join("force.svg"))?;
    emit_plot(&plot("Entropy coefficient", "step", "beta_t", vec![Series::new("beta_t", t(|r| r.beta_t))]), &dir.join("beta.svg"))
}

pub fn train(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = prepare_run_dir(cfg, "train")?;
    let out = match run_er_hclm(&cfg.run) {
        Ok(out) => out,
        Err(CoreError::Divergence { step, partial }) => {
            write_trajectory_csv(&partial, create(&dir.join("trajectory.csv"))?)?;
            return Err(LabError::numerical(format!(
                "run diverged at step {step}; partial trajectory written to {}",
                dir.display()
            )));
        }
        Err(e) => return Err(e.into()),
    };
    write_trajectory_csv(&out.records, create(&dir.join("trajectory.csv"))?)?;
    let eff = effectiveness(&out.records, &cfg.sweep.effectiveness)?;
    write_json(
        &dir.join("summary.json"),
        &json!({
            "final_train_loss": out.final_train_loss,
            "final_test_loss": out.final_test_loss,
            "gen_gap": out.final_gen_gap(),
            "effectiveness": eff,
        }),
    )?;
    if cfg.plots {
        trajectory_plots(&dir, &out.records)?;
    }
    Ok(dir)
}

/// `traj_<beta>_<surrogate>_<mode>.csv` for every finished cell, the
/// summary table, and one plot per summary metric against beta.
pub fn write_sweep_outputs(dir: &Path, res: &SweepResult, plots: bool) -> Result<()> {
    let traj_dir = dir.join("trajectories");
    fs::create_dir_all(&traj_dir)?;
    for cell in &res.cells {
        if let Ok(out) = &cell.outcome {
            let c = &cell.config;
            let name = format!("traj_{}_{}_{}.csv", c.thermo.beta0, c.energy.surrogate.kind, c.thermo.mode);
            write_trajectory_csv(&out.records, create(&traj_dir.join(name))?)?;
        }
    }
    write_summary_csv(&res.summary, create(&dir.join("summary.csv"))?)?;
    if !plots {
        return Ok(());
    }
    let log_x = res.summary.iter().all(|r| r.beta > 0.0);
    type Metric = fn(&hclm_core::thermostat::SummaryRow) -> f64;
    let metrics: [(&str, &str, Metric); 5] = [
        ("test_loss", "final test loss", |r| r.final_test_loss),
        ("gen_gap", "generalization gap", |r| r.gen_gap),
        ("G", "mean information force G", |r| r.mean_g),
        ("beta_t", "mean beta_t", |r| r.mean_beta_t),
        ("reward", "mean reward", |r| r.mean_reward),
    ];
    let mut keys = Vec::new();
    for r in &res.summary {
        if !keys.contains(&(r.surrogate, r.mode)) {
            keys.push((r.surrogate, r.mode));
        }
    }
    for (file, label, f) in metrics {
        let series = keys
            .iter()
            .map(|&(s, m)| {
                let pts = res.summary.iter().filter(|r| r.surrogate == s && r.mode == m).map(|r| (r.beta, f(r))).collect();
                Series::new(format!("{s} / {m}"), pts)
            })
            .collect();
        let p = Plot {
            log_x,
            ..plot(&format!("{label} versus beta"), "beta", label, series)
        };
        // all-NaN panels (every cell failed) are skipped rather than fatal
        match emit_plot(&p, &dir.join(format!("{file}_vs_beta.svg"))) {
            Ok(()) => {}
            Err(e) => log::warn!("skipping plot {file}: {e}"),
        }
    }
    Ok(())
}

pub fn sweep_cmd(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = prepare_run_dir(cfg, "sweep")?;
    let s = &cfg.sweep;
    let res = sweep(&cfg.run, &s.betas, &s.surrogates, &s.modes, &s.effectiveness, cfg.jobs)?;
    write_sweep_outputs(&dir, &res, cfg.plots)?;
    let failed = res.cells.iter().filter(|c| c.outcome.is_err()).count();
    if failed > 0 {
        return Err(LabError::numerical(format!(
            "{failed} of {} sweep cells failed; see {}",
            res.cells.len(),
            dir.join("summary.csv").display()
        )));
    }
    Ok(dir)
}

pub fn langevin(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = prepare_run_dir(cfg, "langevin")?;
    let l = &cfg.langevin;
    let pot = l.potential.build();
    let mut ens = ParticleEnsemble::at(l.particles, &l.x0, l.beta)?;
    let dim = l.x0.len();
    let one_d = dim == 1 && l.particles >= 100;
    let mut header = vec!["t".to_string()];
    header.extend((0..dim).map(|i| format!("mean_{i}")));
    header.extend((0..dim).map(|i| format!("var_{i}")));
    if one_d {
        header.push("free_energy".into());
    }
    let mut w = csv_writer(&dir.join("moments.csv"))?;
    w.write_record(&header).map_err(csv_err)?;
    let mut rows: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut done = 0;
    let mut chunk = 0u64;
    loop {
        let (mean, var) = ens.moments();
        let mut row: Vec<f64> = mean.into_iter().chain(var).collect();
        if one_d {
            row.push(free_energy_particles(&ens, pot.as_ref(), l.beta, l.hist_lo, l.hist_hi, l.hist_bins)?);
        }
        let mut rec = vec![format!("{:.16e}", ens.time)];
        rec.extend(row.iter().map(|v| format!("{v:.16e}")));
        w.write_record(&rec).map_err(csv_err)?;
        rows.push((ens.time, row));
        if done >= l.steps {
            break;
        }
        let k = l.record_every.min(l.steps - done);
        run_langevin(&mut ens, pot.as_ref(), l.dt, k, rng::derive_seed(l.seed, &[chunk]))?;
        done += k;
        chunk += 1;
    }
    w.flush()?;
    let (mean, var) = ens.moments();
    let mut summary = json!({ "time": ens.time, "mean": mean, "variance": var });
    if let PotentialSpec::Quadratic { stiffness } = l.potential {
        summary["stationary_variance"] = json!(l.beta / stiffness);
    }
    if one_d {
        histogram(&ens, l.hist_lo, l.hist_hi, l.hist_bins)?.write_csv(create(&dir.join("histogram.csv"))?)?;
    }
    write_json(&dir.join("summary.json"), &summary)?;
    if cfg.plots {
        let series = (0..dim)
            .map(|i| Series::new(format!("var_{i}"), rows.iter().map(|(t, r)| (*t, r[dim + i])).collect()))
            .collect();
        emit_plot(&plot("Ensemble variance", "time", "variance", series), &dir.join("variance.svg"))?;
    }
    Ok(dir)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(create(path)?))
}

fn csv_err(e: csv::Error) -> LabError {
    LabError::invalid(format!("csv write failed: {e}"))
}

pub fn fokker_planck(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = prepare_run_dir(cfg, "fokker-planck")?;
    let f = &cfg.fokker_planck;
    let pot = f.potential.build();
    let start = match f.initial {
        InitialDensity::Gaussian { mean, std } => {
            DensityGrid::from_fn(f.lo, f.hi, f.cells, |x| (-(x - mean) * (x - mean) / (2.0 * std * std)).exp())?
        }
        InitialDensity::Uniform => DensityGrid::uniform(f.lo, f.hi, f.cells)?,
        InitialDensity::PointMass { cell } => DensityGrid::point_mass(f.lo, f.hi, f.cells, cell)?,
    };
    let limit = stability_limit(&start, pot.as_ref(), f.beta)?;
    let dt = f.dt.unwrap_or(0.5 * limit);
    let (end, rows) = fp_run(&start, pot.as_ref(), f.beta, dt, f.steps, f.record_every)?;
    write_run_csv(&rows, create(&dir.join("run.csv"))?)?;
    start.write_csv(create(&dir.join("density_initial.csv"))?)?;
    end.write_csv(create(&dir.join("density_final.csv"))?)?;
    let gibbs = DensityGrid::gibbs(f.lo, f.hi, f.cells, pot.as_ref(), f.beta)?;
    write_json(
        &dir.join("summary.json"),
        &json!({
            "dt": dt,
            "stability_limit": limit,
            "final_free_energy": free_energy(&end, pot.as_ref(), f.beta),
            "gibbs_free_energy": free_energy(&gibbs, pot.as_ref(), f.beta),
            "final_mass": end.mass(),
        }),
    )?;
    if cfg.plots {
        emit_plot(
            &plot("Free energy", "time", "free energy", vec![Series::new("E[rho_t]", rows.iter().map(|r| (r.t, r.free_energy)).collect())]),
            &dir.join("free_energy.svg"),
        )?;
        let density = |g: &DensityGrid| g.centers().into_iter().zip(g.rho.iter().copied()).collect();
        emit_plot(
            &plot(
                "Density",
                "theta",
                "rho",
                vec![
                    Series::new("initial", density(&start)),
                    Series::new("final", density(&end)),
                    Series::new("Gibbs", density(&gibbs)),
                ],
            ),
            &dir.join("density.svg"),
        )?;
    }
    Ok(dir)
}

pub fn scaling(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = prepare_run_dir(cfg, "scaling")?;
    let s = &cfg.scaling;
    let mut r = rng::stream(s.seed, 15);
    let samples = s
        .sizes
        .iter()
        .map(|&size| {
            let noise = if s.noise > 0.0 { s.noise * rng::standard_normal(&mut r) } else { 0.0 };
            Ok((size, excess_loss(size, &s.model)? * (1.0 + noise)))
        })
        .collect::<Result<Vec<_>>>()?;
    write_scaling_csv(&samples, create(&dir.join("scaling.csv"))?)?;
    let fit = fit_power_law(&samples)?;
    let mut traces = Vec::new();
    for path in &s.trajectories {
        let file = File::open(path).map_err(|e| LabError::invalid(format!("cannot read trajectory {}: {e}", path.display())))?;
        let records = read_trajectory_csv(file)?;
        traces.push(json!({ "path": path, "trace": empirical_ratio_trace(&records)? }));
    }
    write_json(
        &dir.join("fit.json"),
        &json!({ "fit": fit, "kappa_model": s.model.kappa(), "trajectories": traces }),
    )?;
    if cfg.plots {
        let fitted = samples.iter().map(|&(x, _)| (x, fit.amplitude * x.powf(-fit.kappa_hat))).collect();
        let p = Plot {
            log_x: true,
            log_y: true,
            ..plot(
                "Excess loss versus scale",
                "S",
                "L(S) - L_inf",
                vec![Series::new("samples", samples.clone()), Series::new("fit", fitted)],
            )
        };
        emit_plot(&p, &dir.join("scaling.svg"))?;
    }
    Ok(dir)
}

pub fn memory(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = prepare_run_dir(cfg, "memory")?;
    let m = &cfg.memory;
    let mut trials: Vec<MemoryTrial> = Vec::new();
    let mut per_load = Vec::new();
    for &load in &m.load_ratios {
        let batch = (0..m.trials as u64)
            .map(|k| memory_trial(load, m.seed + k, &m.protocol))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let n = batch.len() as f64;
        let frac = |f: &dyn Fn(&MemoryTrial) -> bool| batch.iter().filter(|t| f(t)).count() as f64 / n;
        let mean = |f: &dyn Fn(&MemoryTrial) -> f64| batch.iter().map(f).sum::<f64>() / n;
        per_load.push(json!({
            "load_ratio": load,
            "retrieval_rate": frac(&|t| t.m_final >= 0.95),
            "transient_rate": frac(&|t| t.m_max >= m.protocol.retrieval_threshold && t.m_final < 0.3),
            "mean_m_final": mean(&|t| t.m_final),
            "mean_m_max": mean(&|t| t.m_max),
            "mean_E_mem": mean(&|t| t.e_mem),
        }));
        trials.extend(batch);
    }
    write_memory_csv(&trials, create(&dir.join("memory.csv"))?)?;
    write_json(&dir.join("summary.json"), &per_load)?;
    if cfg.plots {
        let col = |key: &str| per_load.iter().map(|v| (v["load_ratio"].as_f64().unwrap(), v[key].as_f64().unwrap())).collect();
        emit_plot(
            &plot(
                "Overlap versus load",
                "P/N",
                "overlap",
                vec![Series::new("mean m_final", col("mean_m_final")), Series::new("mean m_max", col("mean_m_max"))],
            ),
            &dir.join("overlap.svg"),
        )?;
        emit_plot(
            &plot("Memory effectiveness versus load", "P/N", "E_mem", vec![Series::new("mean E_mem", col("mean_E_mem"))]),
            &dir.join("effectiveness.svg"),
        )?;
    }
    Ok(dir)
}

pub fn gradcheck(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = prepare_run_dir(cfg, "gradcheck")?;
    let g = &cfg.gradcheck;
    let rep = gradient_suite(g.seed, g.configs, g.fd_step)?;
    write_json(
        &dir.join("gradcheck.json"),
        &json!({ "configs": rep.configs, "max_rel_err": rep.max_rel_err, "worst": rep.worst, "tolerance": g.tolerance }),
    )?;
    println!("max relative error {:.3e} over {} configurations (worst: {})", rep.max_rel_err, rep.configs, rep.worst);
    if !(rep.max_rel_err <= g.tolerance) {
        return Err(LabError::numerical(format!(
            "gradient check failed: {:.3e} exceeds tolerance {:.1e}",
            rep.max_rel_err, g.tolerance
        )));
    }
    Ok(dir)
}

pub fn checks(cfg: &ExperimentConfig, only: &[usize]) -> Result<PathBuf> {
    let dir = prepare_run_dir(cfg, "checks")?;
    let regime_dir = dir.join("regime");
    fs::create_dir_all(&regime_dir)?;
    let opts = CheckOptions {
        jobs: cfg.jobs,
        artifact_dir: Some(&regime_dir),
    };
    let outcomes = if only.is_empty() {
        run_all(&opts)
    } else {
        only.iter().map(|&id| crate::checks::run_criterion(id, &opts)).collect()
    };
    for o in &outcomes {
        println!("{o}");
    }
    let report: Vec<_> = outcomes
        .iter()
        .map(|o| json!({ "criterion": o.id, "name": o.name, "passed": o.passed, "seconds": o.elapsed.as_secs_f64(), "detail": o.detail }))
        .collect();
    write_json(&dir.join("checks.json"), &report)?;
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    if failed > 0 {
        return Err(LabError::numerical(format!("{failed} of {} checks failed", outcomes.len())));
    }
    Ok(dir)
}
