use std::path::PathBuf;
use std::process::ExitCode;

use cascade_cli::{load_config, resolve_seed, run_experiment, ExperimentConfig, ExperimentKind, RunOptions, SEED_ENV};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cascade", version, about = "Stochastic dyadic shell-model experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stationary ensemble: shell moments, flux balance and spectrum.
    Simulate(Common),
    /// Dissipation rate over a list of viscosities.
    SweepNu(Common),
    /// Stationary spectrum and its slope over the inertial range.
    Spectrum(Common),
    /// Bracket-span certificate for the low shells.
    HormanderVerify(Common),
    /// Gram-matrix spectral probe and high-mode tangent decay.
    Malliavin(Common),
    /// Controlled tangent decay and control cost.
    ControlDemo(Common),
}

#[derive(Args)]
struct Common {
    /// TOML configuration; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides CASCADE_SEED and the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: available cores).
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, common) = match cli.command {
        Command::Simulate(c) => (ExperimentKind::Simulate, c),
        Command::SweepNu(c) => (ExperimentKind::SweepNu, c),
        Command::Spectrum(c) => (ExperimentKind::Spectrum, c),
        Command::HormanderVerify(c) => (ExperimentKind::Hormander, c),
        Command::Malliavin(c) => (ExperimentKind::Malliavin, c),
        Command::ControlDemo(c) => (ExperimentKind::ControlDemo, c),
    };
    let result = (|| {
        let cfg = match &common.config {
            Some(p) => load_config(p)?,
            None => ExperimentConfig::default(),
        };
        let env = std::env::var(SEED_ENV).ok();
        let seed = resolve_seed(common.seed, env.as_deref(), cfg.run.seed)?;
        let opts = RunOptions {
            seed,
            threads: common.threads,
        };
        run_experiment(kind, &cfg, &common.out, &opts)
    })();
    match result {
        Ok(outcome) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&outcome.summary).expect("summary serializes")
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
