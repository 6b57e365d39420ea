use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use hazboard_cli::{exit_code, load_config, output_dir, run};

#[derive(Parser)]
#[command(name = "hazboard", version, about = "Constrained cooperative MARL experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Train a single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Train seeds 0..n.
    #[arg(long)]
    seeds: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `section.key=value`, repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured seed.
    Train(RunArgs),
    /// Re-evaluate the saved model of one seed and print its metrics.
    Eval {
        /// Run directory written by `train`.
        run: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Applied on top of the run's config snapshot.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Train the full method and its three ablations.
    Ablate(RunArgs),
    /// Train one run per lookahead horizon.
    SweepH {
        #[command(flatten)]
        args: RunArgs,
        /// Comma-separated horizons.
        #[arg(long = "h", value_delimiter = ',', default_value = "0,3,5,8")]
        horizons: Vec<usize>,
    },
    /// Merge the seed reports of a run directory into mean and std.
    Report {
        run: PathBuf,
    },
}

fn configure(a: &RunArgs) -> Result<(hazboard::ExperimentConfig, PathBuf)> {
    let cfg = load_config(a.config.as_deref(), &a.overrides, a.seed, a.seeds)?;
    let out = output_dir(&cfg, a.out.as_deref());
    Ok((cfg, out))
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => {
            let (cfg, out) = configure(&a)?;
            for o in run::train(&cfg, &out, "train")? {
                eprintln!("seed {}: R_final {:.3} C_final {:.3}", o.seed, o.report.r_final, o.report.c_final);
            }
            println!("{}", out.display());
        }
        Command::Eval { run, seed, overrides } => {
            let report = run::eval(&run, seed, &overrides)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Ablate(a) => {
            let (cfg, out) = configure(&a)?;
            run::ablate(&cfg, &out)?;
            println!("{}", out.join("summary.csv").display());
        }
        Command::SweepH { args, horizons } => {
            let (cfg, out) = configure(&args)?;
            run::sweep_h(&cfg, &out, &horizons)?;
            println!("{}", out.join("summary.csv").display());
        }
        Command::Report { run } => {
            let agg = run::report(&run)?;
            println!("{}", serde_json::to_string_pretty(&agg)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
