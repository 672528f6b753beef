//! Argument parsing and dispatch.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use hclm_core::surrogates::SurrogateKind;
use hclm_core::thermostat::ThermoMode;

use crate::commands;
use crate::config::{load_config, ExperimentConfig};
use crate::error::Result;

#[derive(Debug, Parser)]
#[command(name = "hclm", version, about = "Entropy-regulated learning dynamics experiments")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON experiment configuration; omitted sections take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root of the output tree.
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    /// Run directory name under `<output_dir>/<command>/`.
    #[arg(long, global = true)]
    pub tag: Option<String>,
    /// Worker threads for grid commands.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Seed for the selected command.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Skip SVG output.
    #[arg(long, global = true)]
    pub no_plots: bool,
    /// Log more (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// One adaptive-coefficient training run.
    Train {
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        surrogate: Option<SurrogateKind>,
        #[arg(long)]
        mode: Option<ThermoMode>,
        #[arg(long)]
        eta: Option<f64>,
    },
    /// Beta x surrogate x mode grid.
    Sweep {
        #[arg(long, value_delimiter = ',')]
        betas: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        surrogates: Option<Vec<SurrogateKind>>,
        #[arg(long, value_delimiter = ',')]
        modes: Option<Vec<ThermoMode>>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Particle ensemble under overdamped Langevin dynamics.
    Langevin {
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        particles: Option<usize>,
    },
    /// Grid solver for the density evolution.
    FokkerPlanck {
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        cells: Option<usize>,
    },
    /// Synthetic scaling-law samples and power-law fit.
    Scaling {
        #[arg(long)]
        noise: Option<f64>,
        /// Trajectory CSVs to summarize as injection/dissipation ratios.
        #[arg(long = "trajectory")]
        trajectories: Vec<PathBuf>,
    },
    /// Hopfield retrieval trials across load ratios.
    Memory {
        #[arg(long, value_delimiter = ',')]
        load_ratios: Option<Vec<f64>>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Finite-difference check of energy gradients on random models.
    Gradcheck {
        #[arg(long)]
        configs: Option<usize>,
    },
    /// The full acceptance suite.
    Checks {
        /// Run only these criteria (1-12).
        #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(u8).range(1..=12))]
        only: Vec<u8>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Train { .. } => "train",
            Command::Sweep { .. } => "sweep",
            Command::Langevin { .. } => "langevin",
            Command::FokkerPlanck { .. } => "fokker-planck",
            Command::Scaling { .. } => "scaling",
            Command::Memory { .. } => "memory",
            Command::Gradcheck { .. } => "gradcheck",
            Command::Checks { .. } => "checks",
        }
    }
}

/// Folds flags over the loaded (or default) configuration.
pub fn resolve(cli: &Cli) -> Result<ExperimentConfig> {
    let g = &cli.global;
    let mut cfg = match &g.config {
        Some(path) => load_config(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(d) = &g.output_dir {
        cfg.output_dir = d.clone();
    }
    if let Some(t) = &g.tag {
        cfg.tag = t.clone();
    }
    if let Some(j) = g.jobs {
        cfg.jobs = j;
    }
    if g.no_plots {
        cfg.plots = false;
    }
    if let Some(s) = g.seed {
        match cli.command {
            Command::Train { .. } | Command::Sweep { .. } => cfg.run.seed = s,
            Command::Langevin { .. } => cfg.langevin.seed = s,
            Command::Scaling { .. } => cfg.scaling.seed = s,
            Command::Memory { .. } => cfg.memory.seed = s,
            Command::Gradcheck { .. } => cfg.gradcheck.seed = s,
            Command::FokkerPlanck { .. } | Command::Checks { .. } => {
                log::warn!("--seed has no effect on {}", cli.command.name())
            }
        }
    }
    match &cli.command {
        Command::Train { steps, beta, surrogate, mode, eta } => {
            let run = &mut cfg.run;
            if let Some(v) = steps {
                run.steps = *v;
            }
            if let Some(v) = beta {
                run.energy.beta = *v;
                run.thermo.beta0 = *v;
            }
            if let Some(v) = surrogate {
                run.energy.surrogate.kind = *v;
            }
            if let Some(v) = mode {
                run.thermo.mode = *v;
            }
            if let Some(v) = eta {
                run.eta = *v;
            }
        }
        Command::Sweep { betas, surrogates, modes, steps } => {
            if let Some(v) = betas {
                cfg.sweep.betas = v.clone();
            }
            if let Some(v) = surrogates {
                cfg.sweep.surrogates = v.clone();
            }
            if let Some(v) = modes {
                cfg.sweep.modes = v.clone();
            }
            if let Some(v) = steps {
                cfg.run.steps = *v;
            }
        }
        Command::Langevin { beta, dt, steps, particles } => {
            let l = &mut cfg.langevin;
            if let Some(v) = beta {
                l.beta = *v;
            }
            if let Some(v) = dt {
                l.dt = *v;
            }
            if let Some(v) = steps {
                l.steps = *v;
            }
            if let Some(v) = particles {
                l.particles = *v;
            }
        }
        Command::FokkerPlanck { beta, steps, cells } => {
            let f = &mut cfg.fokker_planck;
            if let Some(v) = beta {
                f.beta = *v;
            }
            if let Some(v) = steps {
                f.steps = *v;
            }
            if let Some(v) = cells {
                f.cells = *v;
            }
        }
        Command::Scaling { noise, trajectories } => {
            if let Some(v) = noise {
                cfg.scaling.noise = *v;
            }
            cfg.scaling.trajectories.extend(trajectories.iter().cloned());
        }
        Command::Memory { load_ratios, trials } => {
            if let Some(v) = load_ratios {
                cfg.memory.load_ratios = v.clone();
            }
            if let Some(v) = trials {
                cfg.memory.trials = *v;
            }
        }
        Command::Gradcheck { configs } => {
            if let Some(v) = configs {
                cfg.gradcheck.configs = *v;
            }
        }
        Command::Checks { .. } => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> Result<PathBuf> {
    let cfg = resolve(cli)?;
    match &cli.command {
        Command::Train { .. } => commands::train(&cfg),
        Command::Sweep { .. } => commands::sweep_cmd(&cfg),
        Command::Langevin { .. } => commands::langevin(&cfg),
        Command::FokkerPlanck { .. } => commands::fokker_planck(&cfg),
        Command::Scaling { .. } => commands::scaling(&cfg),
        Command::Memory { .. } => commands::memory(&cfg),
        Command::Gradcheck { .. } => commands::gradcheck(&cfg),
        Command::Checks { only } => {
            let only: Vec<usize> = only.iter().map(|&v| v as usize).collect();
            commands::checks(&cfg, &only)
        }
    }
}

/// Parses `argv` (program name first), runs the command and returns the exit
/// code: 0 success, 1 usage or validation error, 2 numerical failure.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.global.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();
    match execute(&cli) {
        Ok(dir) => {
            println!("wrote {}", dir.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
