use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fronthaul_core::survivability::RisMode;
use fronthaul_sim::{cmd_converge, cmd_sweep, cmd_validate, CliError, RunOptions};

#[derive(Debug, Parser)]
#[command(name = "fronthaul-sim", version, about = "Survivable wireless fronthaul simulations")]
struct Cli {
    /// Worker threads for realization sweeps (default: available parallelism).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Trace the rate controller on one pinned realization.
    Converge {
        #[command(flatten)]
        common: Common,
        /// Where to write the trace CSV (default: <out>/converge_trace.csv).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Monte Carlo survivability sweep over the configured scenarios.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Realizations per scenario, overriding the config.
        #[arg(long)]
        realizations: Option<usize>,
        /// Comma-separated RIS modes: optimized, random_phases, off.
        #[arg(long, value_delimiter = ',', value_parser = parse_mode)]
        modes: Option<Vec<RisMode>>,
    },
    /// Check a configuration file without running anything.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_mode(s: &str) -> Result<RisMode, String> {
    s.parse().map_err(|e: fronthaul_core::Error| e.to_string())
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .map_err(|e| CliError::Runtime(format!("cannot start worker pool: {e}")))?;
    }
    match cli.command {
        Command::Converge { common, trace } => {
            let report = cmd_converge(&RunOptions {
                config: common.config,
                out: common.out,
                seed: common.seed,
                trace,
                ..RunOptions::default()
            })?;
            println!(
                "{}: R1 = {:.6e} bit/s, R2 = {:.6e} bit/s, conventional R2 = {:.6e} bit/s (C0 = {:.6e})",
                report.status, report.r1, report.r2, report.r2_tilde, report.c0_bps
            );
            println!("trace ({} rows): {}", report.rows, report.trace_path.display());
        }
        Command::Sweep {
            common,
            realizations,
            modes,
        } => {
            let report = cmd_sweep(&RunOptions {
                config: common.config,
                out: common.out,
                seed: common.seed,
                realizations,
                modes,
                trace: None,
            })?;
            println!("summary: {}", report.summary_path.display());
            if !report.failures.is_empty() {
                let lines: Vec<String> = report
                    .failures
                    .iter()
                    .map(|(s, m, e)| format!("{s}/{m}: {e}"))
                    .collect();
                return Err(CliError::Runtime(format!(
                    "some scenarios failed:\n  {}",
                    lines.join("\n  ")
                )));
            }
        }
        Command::Validate { config } => {
            cmd_validate(&config)?;
            println!("{}: valid", config.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // usage errors share the configuration exit code
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprint!("error: {e}");
            if matches!(e, CliError::Runtime(_)) {
                eprintln!();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
