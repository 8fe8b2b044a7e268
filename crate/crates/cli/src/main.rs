//! `rdm-delay`: command-line driver for reference runs, delay propagation,
//! sweeps and the validation suites.
//!
//! Exit codes: 0 on success, 2 on validation errors, 3 on numerical failures.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rdm_delay::ci_model::CiSystem;
use rdm_delay::constraint_prop::PropagationMode;
use rdm_delay::delay_core::DelayConfig;
use rdm_delay::harness::{
    self, ExperimentConfig, MzConfig, MzDynamics, RunParams, SweepAxis, SyntheticOptions,
};
use rdm_delay::{Error, Result};

#[derive(Parser)]
#[command(name = "rdm-delay", version, about = "Time-delay propagation of one-electron reduced density matrices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Propagate CI coefficients and write the reference trajectory.
    GroundTruth {
        #[arg(long)]
        system: PathBuf,
        #[arg(long, default_value_t = 0.08268)]
        dt: f64,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the contraction tensor and write its matricization.
    BuildB {
        #[arg(long)]
        system: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Warm-start from the reference and propagate with the delay scheme.
    Propagate(RunArgs),
    /// Run the delay scheme over a list of ell, stride or dt values.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated values of the swept parameter.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Worker threads for concurrent sweep points.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// One-electron exactness suite.
    ValidateOneElectron {
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long, default_value_t = 0.008268)]
        dt: f64,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mori–Zwanzig versus delay propagation on a partially observed system.
    MzCompare {
        #[arg(long, default_value_t = 6)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        m: usize,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long, value_enum, default_value_t = Dynamics::Diagonal)]
        dynamics: Dynamics,
        #[arg(long)]
        ell: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic two-electron system file.
    GenSystem {
        #[arg(long)]
        n_configs: usize,
        #[arg(long)]
        orbitals: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        zero_diagonal_dipole: bool,
        #[arg(long, default_value_t = 0.5)]
        amplitude: f64,
        #[arg(long, default_value_t = 0.9)]
        omega: f64,
        #[arg(long, default_value_t = 5)]
        cycles: u32,
        /// Output directory; `system.json` is written there. Stdout if absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    system: PathBuf,
    #[arg(long, default_value_t = 0.08268)]
    dt: f64,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    ell: usize,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long, default_value_t = 1e-12)]
    rtol: f64,
    #[arg(long, value_enum, default_value_t = Mode::Constrained)]
    mode: Mode,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Constrained,
    Raw,
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Ell,
    Stride,
    Dt,
}

#[derive(Clone, Copy, ValueEnum)]
enum Dynamics {
    Identity,
    Diagonal,
    Dense,
}

impl RunArgs {
    fn params(&self) -> Result<RunParams> {
        let mode = match self.mode {
            Mode::Constrained => PropagationMode::Constrained,
            Mode::Raw => PropagationMode::Raw,
        };
        RunParams::new(self.dt, self.steps, DelayConfig::new(self.ell, self.stride, self.rtol)?, mode)
    }
}

fn parse_list<T: std::str::FromStr>(values: &[String]) -> Result<Vec<T>> {
    values
        .iter()
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| Error::Validation(format!("cannot parse sweep value '{v}'")))
        })
        .collect()
}

fn emit(text: &str, out: Option<&Path>, file: &str) -> Result<()> {
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(file), text)?;
    }
    println!("{text}");
    Ok(())
}

fn run_sweep(cfg: &ExperimentConfig) -> Result<()> {
    let outcome = harness::run_config(cfg)?;
    for (p, r) in outcome.points.iter().zip(&outcome.results) {
        match r {
            Ok(res) => println!("{}", res.metrics.summary_json()?),
            Err(e) => log::error!("ell = {}, k = {}, dt = {}: {e}", p.delay.ell, p.delay.stride, p.dt),
        }
    }
    match outcome.results.into_iter().find_map(|r| r.err()) {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GroundTruth { system, dt, steps, out } => {
            let sys = CiSystem::load(&system)?;
            let summary = harness::write_ground_truth(&sys, dt, steps, &out)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::BuildB { system, out } => {
            let b = CiSystem::load(&system)?.build_b()?;
            let json = harness::b_tensor_json(&b)?;
            match out {
                Some(dir) => {
                    fs::create_dir_all(&dir)?;
                    fs::write(dir.join("b_tensor.json"), json)?;
                }
                None => println!("{json}"),
            }
        }
        Command::Propagate(args) => {
            let cfg = ExperimentConfig {
                system: args.system.clone(),
                base: args.params()?,
                sweep: SweepAxis::None,
                out_dir: args.out.clone(),
                workers: None,
            };
            run_sweep(&cfg)?;
        }
        Command::Sweep { run, axis, values, workers } => {
            let sweep = match axis {
                Axis::Ell => SweepAxis::Ell(parse_list(&values)?),
                Axis::Stride => SweepAxis::Stride(parse_list(&values)?),
                Axis::Dt => SweepAxis::Dt(parse_list(&values)?),
            };
            let cfg = ExperimentConfig {
                system: run.system.clone(),
                base: run.params()?,
                sweep,
                out_dir: run.out.clone(),
                workers,
            };
            run_sweep(&cfg)?;
        }
        Command::ValidateOneElectron { k, dt, steps, seed, out } => {
            let report = harness::validate_one_electron(k, seed, steps, dt)?;
            emit(&serde_json::to_string_pretty(&report)?, out.as_deref(), "validation.json")?;
        }
        Command::MzCompare { n, m, steps, dynamics, ell, seed, out } => {
            let dynamics = match dynamics {
                Dynamics::Identity => MzDynamics::Identity,
                Dynamics::Diagonal => MzDynamics::Diagonal,
                Dynamics::Dense => MzDynamics::Dense,
            };
            let report = harness::mz_compare(&MzConfig { n, m, steps, seed, dynamics, ell })?;
            if let Some(dir) = &out {
                fs::create_dir_all(dir)?;
                report.write_trajectories(&dir.join("trajectories.csv"))?;
            }
            emit(&report.summary_json()?, out.as_deref(), "summary.json")?;
        }
        Command::GenSystem { n_configs, orbitals, seed, zero_diagonal_dipole, amplitude, omega, cycles, out } => {
            let opts = SyntheticOptions {
                zero_diagonal_dipole,
                field: rdm_delay::ci_model::FieldProfile::new(amplitude, omega, cycles)?,
                ..SyntheticOptions::default()
            };
            let json = harness::generate_synthetic_system(n_configs, orbitals, seed, &opts)?.to_json_string()?;
            match out {
                Some(dir) => {
                    fs::create_dir_all(&dir)?;
                    fs::write(dir.join("system.json"), json)?;
                }
                None => println!("{json}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
