//! Command line front end: everything lives in the library.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use arraysim::harness::{check_orthogonality, run_scenario, throughput, Scenario};

#[derive(Parser)]
#[command(
    name = "arraysim",
    version,
    about = "Deterministic simulator of a distributed interferometer control system"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and write archive.csv, report.json and config.json.
    ///
    /// Exits 0 only when every accepted command was applied at its tagged
    /// event (no timing violations).
    Run {
        /// Scenario file, or a bare device configuration.
        #[arg(long)]
        config: PathBuf,
        /// Simulated duration in seconds.
        #[arg(long)]
        duration: f64,
        /// Seed for pulse and message jitter.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
    },
    /// Demodulate every pair of phase switching patterns for the first n
    /// Walsh indices and verify they separate exactly.
    CheckOrthogonality {
        /// Number of antennas (1..=63), assigned indices 1..n.
        #[arg(long)]
        antennas: u8,
    },
    /// Print the sustained polled operation rate of the field bus.
    Throughput {
        /// Payload bytes per frame (0..=8).
        #[arg(long)]
        dlc: usize,
    },
}

fn real_main() -> arraysim::Result<ExitCode> {
    match Cli::parse().cmd {
        Cmd::Run {
            config,
            duration,
            seed,
            out,
        } => {
            let scenario = Scenario::load(&config)?;
            let outcome = run_scenario(&scenario, duration, seed, &out)?;
            println!("{}", outcome.report.summary());
            println!("archive: {}", outcome.archive_path.display());
            println!("report:  {}", outcome.report_path.display());
            if outcome.report.clean() {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(1))
            }
        }
        Cmd::CheckOrthogonality { antennas } => {
            let chk = check_orthogonality(antennas)?;
            if chk.ok() {
                println!(
                    "{} antennas, {} pattern pairs: all demodulate exactly",
                    chk.antennas, chk.pairs_checked
                );
                Ok(ExitCode::SUCCESS)
            } else {
                for (a, b, i, q) in &chk.failures {
                    println!("pair ({a}, {b}) demodulated to ({i}, {q})");
                }
                Ok(ExitCode::from(1))
            }
        }
        Cmd::Throughput { dlc } => {
            let t = throughput(dlc)?;
            println!(
                "dlc {}: {} bits/frame, {} us/frame, {} us/operation, {} ops/s",
                t.dlc,
                t.frame_bits,
                t.frame_ns as f64 / 1000.0,
                t.round_trip_ns as f64 / 1000.0,
                t.ops_per_second
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
