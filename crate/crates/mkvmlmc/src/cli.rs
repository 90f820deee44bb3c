use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::config::{Config, Experiment};
use crate::error::AppError;
use crate::exec::RayonExecutor;
use crate::experiments;
use crate::output::write_report;

#[derive(Debug, Parser)]
#[command(name = "mkvmlmc", version, about = "Multilevel Monte Carlo for point-delay McKean-Vlasov SDEs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Master seed, overriding `experiment.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, overriding `experiment.out_dir` (default `out`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one particle system and dump trajectories and moments.
    Simulate(Common),
    /// Strong error across levels on a shared Brownian lattice.
    StrongConvergence(Common),
    /// Variance of multilevel corrections against level and particle count.
    VarianceDecay(Common),
    /// Mean of multilevel corrections and the telescoping check.
    MeanDecay(Common),
    /// MLMC work across target accuracies.
    Complexity(Common),
    /// Fourier Lévy areas against a Riemann-sum oracle.
    LevyValidate(Common),
    /// Moment stability of tamed and untamed schemes.
    Moments(Common),
    /// One adaptive MLMC estimate.
    Mlmc(Common),
}

impl Command {
    fn parts(&self) -> (Experiment, &Common) {
        match self {
            Command::Simulate(c) => (Experiment::Simulate, c),
            Command::StrongConvergence(c) => (Experiment::StrongConvergence, c),
            Command::VarianceDecay(c) => (Experiment::VarianceDecay, c),
            Command::MeanDecay(c) => (Experiment::MeanDecay, c),
            Command::Complexity(c) => (Experiment::Complexity, c),
            Command::LevyValidate(c) => (Experiment::LevyValidate, c),
            Command::Moments(c) => (Experiment::Moments, c),
            Command::Mlmc(c) => (Experiment::Mlmc, c),
        }
    }
}

/// Loads, validates and runs one experiment, writing into `out`.
pub fn run_experiment(
    experiment: Experiment,
    config: &Path,
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<Vec<PathBuf>, AppError> {
    let text = fs::read_to_string(config).map_err(|e| AppError::io(config, e))?;
    let mut cfg = Config::from_json(&text)?;
    if let Some(o) = out {
        cfg.experiment.out_dir = Some(o.display().to_string());
    }
    let dir = PathBuf::from(cfg.experiment.out_dir.get_or_insert_with(|| "out".into()).clone());
    let resolved = cfg.resolve(experiment, seed)?;
    let exec = RayonExecutor::new(resolved.config.experiment.threads)?;
    let start = Instant::now();
    let report = experiments::run(&resolved, &exec)?;
    eprintln!(
        "{}: finished in {:.2} s on {} threads",
        experiment.id(),
        start.elapsed().as_secs_f64(),
        exec.threads()
    );
    write_report(&dir, &resolved, &report)
}

/// Parses `args` and runs; returns the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let (experiment, common) = cli.command.parts();
    match run_experiment(experiment, &common.config, common.seed, common.out.as_deref()) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
