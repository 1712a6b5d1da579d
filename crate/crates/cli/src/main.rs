use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use switchjump_cli::{catalog, run, Overrides};

/// Regime-switching jump-diffusion experiments.
#[derive(Parser)]
#[command(name = "switchjump", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Directory for data files, summary and manifest.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Root seed, overriding the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; never changes results.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// List the built-in models and their parameters.
    ListModels,
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::ListModels => {
            for line in catalog::listing() {
                println!("{line}");
            }
            ExitCode::SUCCESS
        }
        Command::Run {
            config,
            output_dir,
            seed,
            workers,
        } => {
            let overrides = Overrides {
                output_dir,
                seed,
                workers,
            };
            match run(&config, &overrides) {
                Ok(report) => {
                    for c in &report.checks {
                        let status = if c.pass { "PASS" } else { "FAIL" };
                        println!("{status} {}: {}", c.name, c.detail);
                    }
                    println!("wrote {}", report.output_dir.display());
                    ExitCode::from(report.exit_code() as u8)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            }
        }
    }
}
