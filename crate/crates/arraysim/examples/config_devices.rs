//! Declarative device configuration and the station that serves it.
//!
//! A topology is plain JSON: buses, devices, typed properties with codecs,
//! ranges, monitor periods and alarm bands. The registry validates it, a
//! station builds the bus and hardware from it, and clients reach devices
//! through resolve/release handles so transient devices exist only while
//! someone holds them.

use arraysim::{default_topology, load_config, ArrayTime, Registry, Station};

fn main() -> arraysim::Result<()> {
    let registry = Registry::from_doc(default_topology())?;
    println!(
        "{} buses, {} devices:",
        registry.buses().len(),
        registry.devices().len()
    );
    for d in registry.devices() {
        println!(
            "  {:<12} {:?}/{:?} on {} node {}, {} properties",
            d.name,
            d.kind,
            d.lifecycle,
            d.bus,
            d.node,
            d.properties.len()
        );
    }

    // The emitted form is the interchange format: what one run writes out,
    // the next run loads back unchanged.
    let text = registry.emit();
    assert_eq!(load_config(&text)?.doc(), registry.doc());
    println!("emitted configuration round-trips ({} bytes)\n", text.len());

    // One station per bus.
    let mut station = Station::build(&registry, "ANT1")?;

    // The cryostat is transient: it is instantiated by the first resolve
    // and torn down by the last release.
    assert!(!station.is_instantiated("ANT1/CRYO")?);
    let h1 = station.resolve("ANT1/CRYO")?;
    let h2 = station.resolve("ANT1/CRYO")?;
    println!(
        "resolved twice: instantiated={}, instantiations so far={}",
        station.is_instantiated("ANT1/CRYO")?,
        station.instantiation_count("ANT1/CRYO")?
    );

    let t0 = ArrayTime::from_ns(5_000_000);
    let temp = station.get_property(&h1, "TEMP_K", t0)?;
    println!(
        "TEMP_K = {} K ({:?}, read finished at {})",
        temp.value, temp.quality, temp.timestamp
    );

    // Immediate write, then read back through the other handle.
    let applied = station.set_property_now(&h2, "SETPOINT_K", 80.5, temp.timestamp)?;
    let setpoint = station.get_property(&h1, "SETPOINT_K", applied)?;
    println!("SETPOINT_K = {} K after an immediate write", setpoint.value);

    // Range and access are enforced before any wire traffic.
    println!(
        "write outside the declared range: {}",
        station
            .set_property_now(&h1, "SETPOINT_K", 1000.0, applied)
            .unwrap_err()
    );
    println!(
        "write to a read-only property:    {}",
        station
            .set_property_now(&h1, "TEMP_K", 0.0, applied)
            .unwrap_err()
    );

    station.release(&h1)?;
    station.release(&h2)?;
    println!(
        "released both handles: instantiated={}",
        station.is_instantiated("ANT1/CRYO")?
    );

    // The hardware journals every write it accepted.
    for rec in station.write_journal("ANT1/CRYO")? {
        let when = match rec.latch_event {
            Some(e) => format!("latched at event {e}"),
            None => "applied immediately".into(),
        };
        println!(
            "journal: reg {:#04x} <- {:?} at {} ({when})",
            rec.reg, rec.payload, rec.at
        );
    }
    Ok(())
}
