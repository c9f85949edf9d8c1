use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use intentctl_core::sim::SimError;
use intentctl_harness::server::{self, ServeOptions};
use intentctl_harness::{check, load_config, run_headless, runner::write_trace};
use log::error;

/// Intention-aware hierarchical impedance control simulator.
#[derive(Debug, Parser)]
#[command(name = "intentctl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario to its duration without pacing.
    Run {
        scenario: PathBuf,
        /// Telemetry CSV destination.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print mode occupancy, peak force and peak error.
        #[arg(long)]
        summary: bool,
        /// Print the scenario with every default filled in, then exit.
        #[arg(long)]
        normalized: bool,
    },
    /// Step a scenario in real time and stream state over TCP.
    Serve {
        scenario: PathBuf,
        #[arg(long, default_value_t = 7878)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Simulated seconds per wall-clock second.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        /// Telemetry CSV written whenever the run reaches its duration.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the algebraic property suite.
    Check,
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run {
            scenario,
            out,
            summary,
            normalized,
        } => {
            let (parsed, config) = load_config(&scenario).with_context(|| format!("loading {}", scenario.display()))?;
            if normalized {
                print!("{}", parsed.normalized());
                return Ok(ExitCode::SUCCESS);
            }
            let output = match run_headless(config) {
                Ok(o) => o,
                Err(e @ SimError::NonFinite { .. }) => {
                    error!("{e}");
                    eprintln!("error: {e}");
                    return Ok(ExitCode::from(2));
                }
                Err(e) => return Err(e.into()),
            };
            if let Some(path) = out {
                write_trace(&path, &output.records).with_context(|| format!("writing {}", path.display()))?;
            }
            if summary {
                println!("{}", output.summary);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Serve {
            scenario,
            port,
            host,
            speed,
            out,
        } => {
            let (_, config) = load_config(&scenario).with_context(|| format!("loading {}", scenario.display()))?;
            let options = ServeOptions {
                speed,
                trace: out,
                ..ServeOptions::default()
            };
            let handle = server::spawn(config, (host.as_str(), port), options)?;
            println!("listening on {}", handle.local_addr());
            handle.wait();
            Ok(ExitCode::SUCCESS)
        }
        Command::Check => {
            let outcomes = check::run_all();
            for o in &outcomes {
                println!("{o}");
            }
            let ok = outcomes.iter().all(|o| o.passed);
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("INTENTCTL_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
