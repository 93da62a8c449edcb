//! `fedqp` command line: run, sweep and report federated experiments.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedqp::harness::{self, SweepAxis, SweepSpec};

#[derive(Parser)]
#[command(name = "fedqp", version, about = "Federated learning with QP-guided mutation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of a config and write a run directory.
    Run {
        config: PathBuf,
        /// Override a config key, e.g. `--set engine.strategy=fedavg`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run one experiment per value of a single axis.
    Sweep {
        config: PathBuf,
        /// One of qp_probability, beta, clients_per_round, strategy.
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Recompute and print the summary of a run or sweep directory.
    Report { run_dir: PathBuf },
}

fn execute(cli: Cli) -> fedqp::Result<()> {
    match cli.command {
        Command::Run { config, overrides } => {
            let cfg = harness::load_config(&config, &overrides)?;
            let summary = harness::run(&cfg)?;
            println!("run_dir {}", summary.run_dir.display());
            println!(
                "{} final accuracy {:.2} +- {:.2} % over {} seed(s)",
                summary.strategy,
                100.0 * summary.mean_final_accuracy,
                100.0 * summary.std_final_accuracy,
                summary.seeds.len()
            );
        }
        Command::Sweep {
            config,
            axis,
            values,
            overrides,
        } => {
            let cfg = harness::load_config(&config, &overrides)?;
            let axis: SweepAxis = axis.parse()?;
            let result = harness::sweep(&cfg, &SweepSpec { axis, values })?;
            println!("sweep_dir {}", result.sweep_dir.display());
            for row in &result.rows {
                println!(
                    "{}={:<10} {:>7.2} +- {:.2} %  qp/round {:.2}",
                    axis.as_str(),
                    row.value,
                    100.0 * row.summary.mean_final_accuracy,
                    100.0 * row.summary.std_final_accuracy,
                    row.summary.mean_qp_activations
                );
            }
        }
        Command::Report { run_dir } => {
            print!("{}", harness::report(&run_dir)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::from(2)
        }
    }
}
