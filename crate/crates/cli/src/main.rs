//! `rollhand` command-line front end.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rollhand::runner::{batch_status, run_batch, run_scenario, ExitStatus, DEFAULT_OUTPUT_DIR, OUTPUT_DIR_ENV};
use rollhand::scenario::{parse_override, Override};
use rollhand::verify::{run_suite, Suite};

/// Exit code of `verify` when a check fails.
const VERIFY_FAILED: u8 = 1;

#[derive(Parser)]
#[command(name = "rollhand", version, about = "Simulate and verify compliant in-hand rolling manipulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario (a TOML file or a bundled name) and write its outputs.
    Run {
        scenario: String,
        /// Output directory.
        #[arg(long, env = OUTPUT_DIR_ENV, default_value = DEFAULT_OUTPUT_DIR)]
        out: PathBuf,
        /// Override a scenario value, e.g. `--set sim.dt=5e-4`.
        #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_set)]
        set: Vec<Override>,
    },
    /// Run a verification suite and print a JSON report.
    Verify {
        #[arg(default_value = "all", value_parser = ["all", "lie", "geometry", "mechanics", "control"])]
        suite: String,
    },
    /// Run every scenario file in a directory.
    Batch {
        dir: PathBuf,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Output directory; each scenario writes into a subdirectory.
        #[arg(long, env = OUTPUT_DIR_ENV, default_value = DEFAULT_OUTPUT_DIR)]
        out: PathBuf,
    },
}

fn parse_set(text: &str) -> Result<Override, String> {
    parse_override(text).map_err(|e| e.to_string())
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable report")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { scenario, out, set } => {
            let outcome = run_scenario(&scenario, &out, &set);
            if let Some(summary) = &outcome.summary {
                println!("{}", to_json(summary));
            }
            if let Some(error) = &outcome.error {
                eprintln!("rollhand: {error}");
            } else if outcome.status != ExitStatus::Ok {
                eprintln!("rollhand: {scenario}: {}", outcome.status);
            }
            ExitCode::from(outcome.status.code())
        }
        Command::Verify { suite } => {
            let report = run_suite(Suite::parse(&suite).expect("validated by clap"));
            println!("{}", to_json(&report));
            ExitCode::from(if report.passed { 0 } else { VERIFY_FAILED })
        }
        Command::Batch { dir, jobs, out } => match run_batch(&dir, &out, jobs) {
            Ok(outcomes) => {
                for o in &outcomes {
                    eprintln!("{}: {}{}", o.source, o.status, o.error.as_deref().map(|e| format!(" ({e})")).unwrap_or_default());
                }
                println!("{}", to_json(&outcomes));
                ExitCode::from(batch_status(&outcomes).code())
            }
            Err((status, message)) => {
                eprintln!("rollhand: {message}");
                ExitCode::from(status.code())
            }
        },
    }
}
