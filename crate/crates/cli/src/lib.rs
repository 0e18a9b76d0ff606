//! Command-line front end: `sample`, `scan`, `trace` and `benchmark`.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};

use commands::{cmd_benchmark, cmd_sample, cmd_scan, cmd_trace, Overrides};
use config::{load_run_config, load_suite_config};

#[derive(Debug, Parser)]
#[command(
    name = "xhmc",
    version,
    about = "Hamiltonian Monte Carlo with static and dynamic integration times"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct Common {
    /// TOML config file.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `output.directory`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            out_dir: self.out_dir.clone(),
            seed: self.seed,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run chains and write draws, summary and autocorrelations.
    Sample(Common),
    /// Static uniform runs at L = 2^k.
    Scan {
        #[command(flatten)]
        common: Common,
        /// Smallest k; overrides `scan.l_min_exp`.
        #[arg(long)]
        l_min_exp: Option<u32>,
        /// Largest k; overrides `scan.l_max_exp`.
        #[arg(long)]
        l_max_exp: Option<u32>,
    },
    /// Forward criterion trace from a fixed phase-space point.
    Trace {
        #[command(flatten)]
        common: Common,
        /// Comma-separated q then p.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        init: Option<Vec<f64>>,
        /// Overrides `trace.n_steps`.
        #[arg(long)]
        n_steps: Option<usize>,
    },
    /// Run a target × algorithm suite.
    Benchmark(Common),
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sample(common) => {
            let loaded = load_run_config(&common.config)?;
            let report = cmd_sample(&loaded, &common.overrides())?;
            let s = &report.summary;
            println!(
                "sampled {} draws (step size {:.6e}): median ESS {}, divergent {}; output in {}",
                s.num_draws,
                report.step_size,
                s.ess_median
                    .map_or("n/a".to_string(), |e| format!("{e:.1}")),
                s.cost.n_divergent,
                report.out_dir.display()
            );
        }
        Command::Scan {
            common,
            l_min_exp,
            l_max_exp,
        } => {
            let loaded = load_run_config(&common.config)?;
            let report = cmd_scan(&loaded, l_min_exp, l_max_exp, &common.overrides())?;
            for r in &report.rows {
                match (&r.error, r.ess_per_gradient) {
                    (Some(e), _) => println!("L = {:>6}: error: {e}", r.l),
                    (None, Some(x)) => println!("L = {:>6}: ESS per gradient {x:.5}", r.l),
                    (None, None) => println!("L = {:>6}: ESS undefined", r.l),
                }
            }
            if report.failed() {
                bail!("some scan cells failed; see scan.csv");
            }
        }
        Command::Trace {
            common,
            init,
            n_steps,
        } => {
            let loaded = load_run_config(&common.config)?;
            let report = cmd_trace(&loaded, init.as_deref(), n_steps, &common.overrides())?;
            let c = &report.summary.crossings;
            println!("nuts_time: {:?}", c.nuts_time);
            for x in &c.exhaustion {
                println!("exhaustion_time({}): {:?}", x.delta, x.time);
            }
            println!("kinetic_kappa_time: {:?}", c.kinetic_kappa_time);
            if report.summary.divergent {
                println!("trace truncated by divergence");
            }
        }
        Command::Benchmark(common) => {
            let (suite, base) = load_suite_config(&common.config)?;
            let report = cmd_benchmark(&suite, &base, &common.overrides())?;
            for r in &report.rows {
                match &r.error {
                    Some(e) => println!("{} / {}: error: {e}", r.target, r.algorithm),
                    None => println!(
                        "{} / {}: leapfrog {} median ESS {}",
                        r.target,
                        r.algorithm,
                        r.total_leapfrog,
                        r.median_ess
                            .map_or("n/a".to_string(), |e| format!("{e:.1}"))
                    ),
                }
            }
            if report.failed() {
                bail!("some benchmark cells failed; see benchmark.csv");
            }
        }
    }
    Ok(())
}
