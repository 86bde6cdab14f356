//! A whole scripted run through the same path the command line uses:
//! scenario in, fifteen simulated seconds, archive + report + emitted
//! configuration out. Output lands in target/demo_run.

use std::path::PathBuf;

use arraysim::{demo_scenario, run_scenario};

fn main() -> arraysim::Result<()> {
    let out = PathBuf::from("target/demo_run");
    let outcome = run_scenario(&demo_scenario(), 15.0, 3, &out)?;

    println!("{}", outcome.report.summary());
    println!("clean run (every effect at its tagged event): {}", outcome.report.clean());
    for (station, ns) in &outcome.report.max_period_wire_ns {
        println!(
            "busiest period on {station:<6} {:>7.3} ms of wire time",
            *ns as f64 / 1e6
        );
    }
    println!("archive: {}", outcome.archive_path.display());
    println!("report:  {}", outcome.report_path.display());
    println!("config:  {}", outcome.config_path.display());

    let text = std::fs::read_to_string(&outcome.archive_path)?;
    println!("\nfirst rows of the archive:");
    for line in text.lines().take(6) {
        println!("  {line}");
    }
    println!("  ... {} rows in total", text.lines().count() - 1);
    Ok(())
}
