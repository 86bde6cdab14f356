//! Regenerates the checked-in run inputs under assets/:
//!
//! ```text
//! cargo run --example dump_topology              > assets/default_topology.json
//! cargo run --example dump_topology -- scenario  > assets/demo_scenario.json
//! ```
//!
//! A test pins the asset files to these outputs, so drift between the
//! builders and the checked-in JSON fails the suite.

use arraysim::{default_topology, demo_scenario, Registry};

fn main() -> arraysim::Result<()> {
    match std::env::args().nth(1).as_deref() {
        None | Some("topology") => {
            print!("{}", Registry::from_doc(default_topology())?.emit());
        }
        Some("scenario") => {
            let text = serde_json::to_string_pretty(&demo_scenario()).map_err(arraysim::Error::from)?;
            println!("{text}");
        }
        Some(other) => {
            eprintln!("unknown output {other:?} (expected: topology | scenario)");
            std::process::exit(2);
        }
    }
    Ok(())
}
