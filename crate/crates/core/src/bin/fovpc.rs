use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fovpc::runner::{cmd_compare, cmd_run, parse_seeds, parse_variants, RunSpec, EXIT_BAD_INPUT};

/// FoV-safe visual predictive control simulator.
///
/// Exit codes: 0 success, 1 an episode failed, 2 bad input.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario for each variant and seed; write logs and reports.
    Run {
        /// Scenario TOML file.
        #[arg(long)]
        scenario: PathBuf,
        /// Comma-separated variant names, or `all`.
        #[arg(long, default_value = "all")]
        variants: String,
        /// Seed list such as `0-9` or `1,3,5`.
        #[arg(long, default_value = "0")]
        seeds: String,
        /// Output directory.
        #[arg(long, short, default_value = "out")]
        output: PathBuf,
        #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
        emit_logs: bool,
        #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
        emit_report: bool,
        /// Offline excitation samples (default: from the scenario).
        #[arg(long)]
        gp_offline_samples: Option<usize>,
        /// Sliding GP window (default: from the scenario).
        #[arg(long)]
        gp_window: Option<usize>,
    },
    /// Print median tables from a directory of reports.
    Compare { report_dir: PathBuf },
}

fn main() -> ExitCode {
    let code = match Cli::parse().command {
        Command::Run { scenario, variants, seeds, output, emit_logs, emit_report, gp_offline_samples, gp_window } => {
            let (variants, seeds) = match (parse_variants(&variants), parse_seeds(&seeds)) {
                (Ok(v), Ok(s)) => (v, s),
                (Err(e), _) | (_, Err(e)) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_BAD_INPUT as u8);
                }
            };
            cmd_run(&RunSpec {
                scenario,
                variants,
                seeds,
                output_dir: output,
                emit_logs,
                emit_report,
                gp_offline_samples,
                gp_window,
            })
        }
        Command::Compare { report_dir } => cmd_compare(&report_dir),
    };
    ExitCode::from(code as u8)
}
