//! Command-line front end: experiment configs, figure presets and result files.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime error. The
//! thread count of the parallel engine is read from `INTERCOOP_THREADS`.

pub mod config;
pub mod experiments;
pub mod output;
pub mod presets;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

pub use config::ExperimentConfig;
pub use experiments::run_experiment;
pub use output::{Cell, Table};
pub use presets::{preset, PRESET_NAMES};

use crate::moments::{build_moments, MomentOptions};
use crate::optimize::dc::{dc_matrices, qcqp_sdp_problem};
use crate::par::{self, Execution};
use crate::{Error, Result};

pub const THREADS_ENV: &str = "INTERCOOP_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "intercoop",
    version,
    about = "Interrupted cooperative spectrum sensing experiments"
)]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment from a TOML config or a run manifest.
    Run {
        config: PathBuf,
        /// Output directory, overriding the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a bundled figure preset.
    Preset {
        name: String,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the preset config instead of running it.
        #[arg(long)]
        print: bool,
    },
    /// Check a config without running it.
    Validate { config: PathBuf },
    /// Write the SDP relaxation of the config's deflection program in SDPA format.
    DumpSdp {
        config: PathBuf,
        /// Radius as a fraction of the largest feasible one.
        #[arg(long, default_value_t = 0.5)]
        radius_fraction: f64,
        /// Destination file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parse arguments, run, and map errors to exit codes.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match threads_from_env() {
        Ok(t) => par::init_threads(t),
        Err(e) => return fail(&e),
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(exit_code(e))
}

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        _ => 2,
    }
}

fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(t) if t > 0 => Ok(Some(t)),
            _ => Err(Error::Config(format!(
                "{THREADS_ENV} must be a positive integer, got {v:?}"
            ))),
        },
        Err(_) => Ok(None),
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run { config, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(o) = out {
                cfg.output = o;
            }
            run_and_write(&cfg).map(|_| ())
        }
        Command::Preset {
            name,
            trials,
            seed,
            out,
            print,
        } => {
            let mut cfg = preset(&name)?;
            if let Some(t) = trials {
                cfg.trials = t;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.output = o;
            }
            cfg.validate()?;
            if print {
                print!("{}", cfg.to_toml());
                return Ok(());
            }
            run_and_write(&cfg).map(|_| ())
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            println!(
                "{}: ok ({} nodes, {} trials, experiment {})",
                config.display(),
                cfg.nodes.len(),
                cfg.trials,
                serde_json::to_value(&cfg.experiment)
                    .ok()
                    .and_then(|v| v.get("kind").and_then(|k| k.as_str().map(String::from)))
                    .unwrap_or_default()
            );
            Ok(())
        }
        Command::DumpSdp {
            config,
            radius_fraction,
            out,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            dump_sdp(&cfg, radius_fraction, out.as_deref())
        }
    }
}

/// Run `cfg` and write its tables and manifest under `cfg.output`.
pub fn run_and_write(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let start = Instant::now();
    output::begin_run(&cfg.output, &cfg.name)?;
    let tables = run_experiment(cfg, Execution::available())?;
    let files = output::finish_run(&cfg.output, cfg, &tables, start.elapsed().as_secs_f64())?;
    for f in &files {
        println!("{}", f.display());
    }
    Ok(files)
}

fn dump_sdp(cfg: &ExperimentConfig, radius_fraction: f64, out: Option<&Path>) -> Result<()> {
    if !(radius_fraction > 0.0 && radius_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "radius fraction {radius_fraction} outside (0,1]"
        )));
    }
    let sc = cfg.scenario(0.0, 0.0, cfg.network.memory, 1)?;
    let mom = build_moments(&sc.cfg, &sc.channels, &sc.signal, MomentOptions::default())?;
    let w = cfg.fusion_weights(&mom)?;
    let prog = dc_matrices(&mom, &w)?;
    let budget = sc.cfg.budget();
    let r = radius_fraction * prog.max_radius(budget);
    let (prob, _) = qcqp_sdp_problem(&prog, r, budget)?;
    let comment = format!("{}: n = {}, radius = {r}, budget = {budget}", cfg.name, prog.n());
    let io = |e: std::io::Error| Error::Io(format!("writing SDP: {e}"));
    match out {
        Some(p) => prob.write_sdpa(std::io::BufWriter::new(std::fs::File::create(p).map_err(io)?), &comment),
        None => prob.write_sdpa(std::io::stdout().lock(), &comment),
    }
    .map_err(io)
}
