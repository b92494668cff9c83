//! `bco` command line interface.
//!
//! Exit codes: 0 on success, 2 on configuration or I/O errors, 3 when the
//! algorithm faulted (any replica) or a diagnostic failed.

use bco_harness::config::ExperimentConfig;
use bco_harness::{diag, experiment};
use clap::{Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "bco", about = "Bandit convex optimization experiment harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the replicated experiment described by a JSON config.
    Run {
        /// Path to the experiment config.
        #[arg(long)]
        config: PathBuf,
        /// Constant override as key=value (repeatable); also accepts n,
        /// replicas, seed, and delta.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Output directory (defaults to the config's `out`, then ./bco-out).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run a config across one axis and tabulate regret.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Sweep axis: n, d, or a constant name (eta, lambda, ...).
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values.
        #[arg(long)]
        values: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a built-in self-diagnostic suite.
    Diag {
        #[arg(value_enum)]
        suite: DiagSuite,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DiagSuite {
    Gauge,
    Unbiasedness,
    Ftrl,
}

fn load_config(path: &PathBuf, overrides: &[String]) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_path(path)?;
    for spec in overrides {
        cfg.apply_cli_override(spec)?;
    }
    Ok(cfg)
}

fn out_dir(cli: Option<PathBuf>, cfg: &ExperimentConfig) -> PathBuf {
    cli.unwrap_or_else(|| {
        cfg.out
            .as_ref()
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("bco-out"))
    })
}

/// Ok(true) = clean success, Ok(false) = algorithm fault (exit 3).
fn dispatch(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Run { config, overrides, out } => {
            let cfg = load_config(&config, &overrides)?;
            let outcome = experiment::run_experiment(&cfg, &out_dir(out, &cfg))?;
            println!(
                "{}",
                serde_json::to_string_pretty(&outcome.summary).expect("summary serializes")
            );
            eprintln!("wrote {}", outcome.summary_path.display());
            Ok(!outcome.any_fault())
        }
        Command::Sweep { config, axis, values, out } => {
            let cfg = load_config(&config, &[])?;
            let values: Vec<String> = values
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect();
            let outcome = experiment::sweep(&cfg, &axis, &values, &out_dir(out, &cfg))?;
            println!("value,mean_regret,regret_over_sqrt_n,restarts");
            for row in &outcome.rows {
                println!(
                    "{},{},{},{}",
                    row.value, row.mean_regret, row.regret_over_sqrt_n, row.restarts
                );
            }
            eprintln!("wrote {}", outcome.csv_path.display());
            Ok(!outcome.any_fault())
        }
        Command::Diag { suite } => Ok(match suite {
            DiagSuite::Gauge => diag::diag_gauge(),
            DiagSuite::Unbiasedness => diag::diag_unbiasedness(),
            DiagSuite::Ftrl => diag::diag_ftrl(),
        }),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
