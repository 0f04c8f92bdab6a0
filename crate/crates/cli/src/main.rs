//! `betacrit` command-line driver.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::Context;
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::output::OutputDir;

/// Critical-precision experiments for Gaussian-mixture probes.
///
/// Configuration is layered: built-in defaults, then `--preset`, then
/// `--config`, then `BETACRIT_<SECTION>__<KEY>` environment variables, then
/// `--set section.key=value`.
#[derive(Debug, Parser)]
#[command(name = "betacrit", version, about)]
struct Cli {
    /// Sectioned TOML configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Named bundled preset applied before the config file.
    #[arg(long, global = true, value_name = "NAME")]
    preset: Option<String>,

    /// Override one key; may be repeated.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// First seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Number of consecutive seeds, run in parallel.
    #[arg(long, global = true, default_value_t = 1)]
    seeds: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Locate the Hessian zero crossing on bimodal data.
    Calibrate,
    /// Toy-probe experiments.
    #[command(subcommand)]
    Toy(ToyCommand),
    /// Normal-form simulators.
    #[command(subcommand)]
    Sde(SdeCommand),
    /// Escape-time sweeps and model fits.
    #[command(subcommand)]
    Escape(EscapeCommand),
    /// Classify trajectory logs by shape (the bundled exemplars by default).
    Classify {
        /// Trajectory CSV files.
        #[arg(long = "input", value_name = "PATH", conflicts_with = "synthesize")]
        inputs: Vec<PathBuf>,
        /// Generate one synthetic log per seed of this class
        /// (full_v, fold_back, delayed_escape, no_arc), save and classify it.
        #[arg(long, value_name = "CLASS")]
        synthesize: Option<String>,
    },
    /// Print the effective configuration and its hash.
    Config,
}

#[derive(Debug, Subcommand)]
enum ToyCommand {
    /// Learned-β probe on a two-component mixture.
    Bimodal,
    /// The same probe on single-component data.
    Unimodal,
    /// Two-level annealing on a hierarchical mixture.
    Hierarchy,
    /// Forward split followed by a descending-β merge leg.
    Reverse,
    /// Probe detached from a jointly trained toy encoder.
    Endogenous,
}

#[derive(Debug, Subcommand)]
enum SdeCommand {
    /// Scalar pitchfork normal form.
    Pitchfork,
    /// Coupled multi-mode normal form with persistence statistics.
    Coupled,
}

#[derive(Debug, Subcommand)]
enum EscapeCommand {
    /// Measure escape times over the configured dissipation levels and fit both models.
    Sweep,
    /// Fit both models to a levels CSV (the bundled table by default).
    Fit {
        #[arg(long, value_name = "PATH")]
        input: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = RunConfig::default();
    if let Some(name) = &cli.preset {
        config.apply_preset(name)?;
    }
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        config.merge_toml(&text, &path.display().to_string())?;
    }
    config.apply_env(std::env::vars())?;
    for assignment in &cli.set {
        config.apply_assignment(assignment)?;
    }
    Ok(config)
}

fn command_name(command: &Command) -> String {
    match command {
        Command::Calibrate => "calibrate".into(),
        Command::Toy(t) => format!("toy {}", format!("{t:?}").to_lowercase()),
        Command::Sde(s) => format!("sde {}", format!("{s:?}").to_lowercase()),
        Command::Escape(EscapeCommand::Sweep) => "escape sweep".into(),
        Command::Escape(EscapeCommand::Fit { .. }) => "escape fit".into(),
        Command::Classify { .. } => "classify".into(),
        Command::Config => "config".into(),
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(&cli)?;
    if let Command::Config = cli.command {
        print!("{}", config.canonical());
        println!("# config_hash: {}", config.hash());
        return Ok(());
    }
    if cli.seeds == 0 {
        return Err(CliError::Config("--seeds must be at least 1".into()));
    }
    let out = OutputDir::create(&cli.out, &command_name(&cli.command), &config)?;
    let ctx = Context {
        seeds: (0..cli.seeds as u64).map(|i| cli.seed.wrapping_add(i)).collect(),
        config,
        out,
    };
    match &cli.command {
        Command::Calibrate => commands::calibrate(&ctx),
        Command::Toy(ToyCommand::Bimodal) => commands::toy_bimodal(&ctx),
        Command::Toy(ToyCommand::Unimodal) => commands::toy_unimodal(&ctx),
        Command::Toy(ToyCommand::Hierarchy) => commands::toy_hierarchy(&ctx),
        Command::Toy(ToyCommand::Reverse) => commands::toy_reverse(&ctx),
        Command::Toy(ToyCommand::Endogenous) => commands::toy_endogenous(&ctx),
        Command::Sde(SdeCommand::Pitchfork) => commands::sde_pitchfork(&ctx),
        Command::Sde(SdeCommand::Coupled) => commands::sde_coupled(&ctx),
        Command::Escape(EscapeCommand::Sweep) => commands::escape_sweep(&ctx),
        Command::Escape(EscapeCommand::Fit { input }) => commands::escape_fit(&ctx, input.as_deref()),
        Command::Classify { inputs, synthesize } => commands::classify_logs(&ctx, inputs, synthesize.as_deref()),
        Command::Config => unreachable!("handled above"),
    }?;
    println!("config hash {}; outputs in {}", ctx.out.config_hash(), cli.out.display());
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
