//! The checked-in run inputs under assets/ stay byte-for-byte in step with
//! the builders that generate them (see the dump_topology example).

use std::path::Path;

fn asset(name: &str) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("assets")
        .join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn default_topology_asset_matches_the_builder() {
    let registry = arraysim::Registry::from_doc(arraysim::default_topology()).unwrap();
    assert_eq!(asset("default_topology.json"), registry.emit());
}

#[test]
fn demo_scenario_asset_matches_the_builder() {
    let mut expect = serde_json::to_string_pretty(&arraysim::demo_scenario()).unwrap();
    expect.push('\n');
    assert_eq!(asset("demo_scenario.json"), expect);
}

#[test]
fn demo_scenario_asset_loads_as_a_run_input() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("assets/demo_scenario.json");
    let scenario = arraysim::Scenario::load(&path).unwrap();
    assert_eq!(scenario, arraysim::demo_scenario());
}
