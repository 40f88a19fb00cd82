//! `dirichlet-lab`: runs config-driven experiments and writes hashed output
//! bundles.
//!
//! Exit status is 0 when every check passes, 1 when some check fails and 2
//! for config, I/O or numerical errors.

mod bundle;
mod config;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::bundle::Bundle;
use crate::config::{read_config, Kind};

#[derive(Parser)]
#[command(name = "dirichlet-lab", version, about = "Experiments with non-symmetric Dirichlet forms on finite metric measure spaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Form assumptions, sector bound, generator identities, duality and resolvents.
    Validate(RunArgs),
    /// Cheeger Laplacian eigenvalues, with closed forms for model families.
    Spectrum(RunArgs),
    /// Sample paths and check occupation, martingale and forward-backward identities.
    Simulate(RunArgs),
    /// Resolvent, semigroup and finite-dimensional convergence along a sequence.
    Converge(RunArgs),
    /// Conservativeness criterion table and exact mass defects.
    Conserve(RunArgs),
    /// Exact finite-dimensional expectations against Monte Carlo.
    Fdd(RunArgs),
    /// Kolmogorov moments, modulus of continuity and Gaussian kernel bounds.
    Tightness(RunArgs),
    /// Print the normalized form of a config.
    Normalize {
        #[arg(long)]
        config: PathBuf,
        /// Kind to assume when the config does not name one.
        #[arg(long, value_enum)]
        kind: Option<Kind>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON or TOML experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the config's `out` or `dirichlet-lab-out/<kind>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, env = "DIRICHLET_LAB_THREADS")]
    threads: Option<usize>,
}

enum Failure {
    Checks,
    Error(anyhow::Error),
}

fn run_kind(kind: Kind, args: &RunArgs) -> Result<(), Failure> {
    if let Some(t) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .context("building the thread pool")
            .map_err(Failure::Error)?;
    }
    let mut config = read_config(&args.config, Some(kind)).map_err(Failure::Error)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let base = args.config.parent().unwrap_or(Path::new("."));
    let out = match (&args.out, &config.out) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => base.join(o),
        (None, None) => PathBuf::from("dirichlet-lab-out").join(kind.name()),
    };
    let mut bundle = Bundle::create(&out).map_err(Failure::Error)?;
    bundle.write("config.json", &config.to_pretty()).map_err(Failure::Error)?;
    let outcome = match run::run(&config, base, &mut bundle) {
        Ok(o) => o,
        Err(e) => {
            if let Err(marker) = bundle.fail(&e) {
                log::error!("could not update the partial marker: {marker:#}");
            }
            return Err(Failure::Error(e));
        }
    };
    for c in &outcome.checks {
        let member = c.member.map_or(String::new(), |m| format!("[{m}]"));
        println!(
            "{} {}{member}: {:e} (threshold {:e}) {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.threshold,
            c.detail
        );
    }
    let all = outcome.all_passed();
    let dir = bundle.dir().display().to_string();
    bundle.finish(&config, &outcome).map_err(Failure::Error)?;
    let failed = outcome.checks.iter().filter(|c| !c.passed).count();
    println!("{} of {} checks passed; bundle in {dir}", outcome.checks.len() - failed, outcome.checks.len());
    if all {
        Ok(())
    } else {
        Err(Failure::Checks)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (kind, args) = match cli.command {
        Command::Normalize { config, kind } => {
            return match read_config(&config, kind) {
                Ok(c) => {
                    print!("{}", c.to_pretty());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::from(2)
                }
            };
        }
        Command::Validate(a) => (Kind::Validate, a),
        Command::Spectrum(a) => (Kind::Spectrum, a),
        Command::Simulate(a) => (Kind::Simulate, a),
        Command::Converge(a) => (Kind::Converge, a),
        Command::Conserve(a) => (Kind::Conserve, a),
        Command::Fdd(a) => (Kind::Fdd, a),
        Command::Tightness(a) => (Kind::Tightness, a),
    };
    match run_kind(kind, &args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Checks) => ExitCode::from(1),
        Err(Failure::Error(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
