//! `meanfield` command-line driver.
//!
//! Every subcommand reads one TOML config, writes its CSV tables and a
//! `manifest.json` into the output directory, and prints a short summary.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use meanfield::experiments::RunConfig;

#[derive(Parser)]
#[command(name = "meanfield", version, about = "Mean-field optimal control studies and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every registered invariant check; exit status 1 if any fails.
    Validate(Common),
    /// Solve the configured problem once by successive approximation.
    Train(Common),
    /// Sampled-versus-population convergence study over the N list.
    ConvergeStudy(Common),
    /// Solve from seeded random starts per horizon and compare solutions.
    UniquenessStudy(Common),
    /// Single-atom HJB grid solve plus costate consistency.
    HjbCheck(Common),
    /// Dynamic-programming residual by exhaustive search.
    DppCheck(Common),
    /// Lower-bound estimate of the residual map's stability constant.
    StabilityProbe(Common),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output.dir`, default `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed (overrides `study.base_seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for the global pool.
    #[arg(long)]
    threads: Option<usize>,
}

/// Resolved settings shared by every subcommand.
pub struct Run {
    pub command: &'static str,
    pub config: RunConfig,
    pub out: PathBuf,
    pub threads: usize,
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

type Exec = fn(&Run) -> Result<bool>;

/// Returns whether the command's checks passed.
fn dispatch(command: Command) -> Result<bool> {
    use Command::*;
    let (name, common, exec): (&'static str, Common, Exec) = match command {
        Validate(c) => ("validate", c, commands::validate),
        Train(c) => ("train", c, commands::train),
        ConvergeStudy(c) => ("converge-study", c, commands::converge_study),
        UniquenessStudy(c) => ("uniqueness-study", c, commands::uniqueness_study),
        HjbCheck(c) => ("hjb-check", c, commands::hjb_check),
        DppCheck(c) => ("dpp-check", c, commands::dpp_check),
        StabilityProbe(c) => ("stability-probe", c, commands::stability_probe),
    };
    exec(&setup(name, common)?)
}

fn setup(command: &'static str, common: Common) -> Result<Run> {
    let mut config = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            RunConfig::from_toml(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.study.base_seed = seed;
    }
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("building thread pool")?;
    }
    let out = common
        .out
        .or_else(|| config.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    Ok(Run {
        command,
        config,
        out,
        threads: rayon::current_num_threads(),
    })
}
