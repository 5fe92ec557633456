//! Command-line experiment runner for the `nsfde` library.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::commands::Verdict;
use crate::config::{Config, Overrides};
use crate::output::{sha256_hex, Manifest, OutputDir, RESOLVED_CONFIG};

#[derive(Debug, Parser)]
#[command(name = "nsfde", version, about = "Simulate neutral SFDEs with infinite delay")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML experiment file.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `out_dir` and NSFDE_OUT_DIR).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (overrides NSFDE_WORKERS).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub paths: Option<usize>,
    /// Steps per unit time.
    #[arg(long, short = 'n', global = true)]
    pub n: Option<u32>,
    /// Override any key, e.g. `--set converge.levels=[8,16]`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Estimate the model constants on sampled segments.
    Check,
    /// Simulate trajectories and localization diagnostics.
    Simulate,
    /// Coupled Cauchy ladder and non-explosion scan.
    Converge,
    /// Moment and growth-rate estimates against their bounds.
    Bounds,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Check => "check",
            Command::Simulate => "simulate",
            Command::Converge => "converge",
            Command::Bounds => "bounds",
        }
    }
}

/// Runs one invocation; `Ok` carries the verdict, `Err` a usage or
/// configuration problem.
pub fn execute(cli: &Cli) -> Result<Verdict, String> {
    let started = Instant::now();
    let g = &cli.global;
    let overrides = Overrides {
        out_dir: g.out.clone(),
        workers: g.workers,
        seed: g.seed,
        paths: g.paths,
        n: g.n,
        set: g.set.clone(),
    };
    let setup = Config::load(g.config.as_deref(), &overrides)?.resolve()?;
    let workers = setup
        .config
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| e.to_string())?;

    let mut out = OutputDir::create(&setup.config.out_dir)?;
    let resolved = setup.config.to_toml();
    out.write_bytes(RESOLVED_CONFIG, resolved.as_bytes())?;
    let verdict = pool.install(|| match cli.command {
        Command::Check => commands::check(&setup, &mut out),
        Command::Simulate => commands::simulate(&setup, &mut out),
        Command::Converge => commands::converge(&setup, &mut out),
        Command::Bounds => commands::bounds(&setup, &mut out),
    })?;
    out.write_manifest(&Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        subcommand: cli.command.name().to_string(),
        seed: setup.config.seed,
        config_sha256: sha256_hex(resolved.as_bytes()),
        outputs: out.entries().to_vec(),
        workers,
        wall_time_seconds: started.elapsed().as_secs_f64(),
        verdict: verdict.as_str().to_string(),
    })?;
    Ok(verdict)
}
