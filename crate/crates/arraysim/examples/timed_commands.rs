//! Time-tagged commands: accepted early, transmitted in the period before
//! the tagged event, latched by the hardware exactly at the event.
//!
//! The intake enforces a minimum lead of two events, which is what makes
//! the "exactly" possible: a command accepted at event n for event n+2 or
//! later always reaches its station with a full period to spare, however
//! the message latency jitters.

use arraysim::{
    default_topology, ArrayTime, CommandBody, CommandRequest, Error, Registry, Simulation,
};

fn main() -> arraysim::Result<()> {
    let registry = Registry::from_doc(default_topology())?;
    let mut sim = Simulation::new(&registry, 17)?;

    let accepted = sim.submit(
        ArrayTime::ZERO,
        CommandRequest {
            device: "ANT2/CRYO".into(),
            execute_event: 5,
            body: CommandBody::SetProperty {
                property: "SETPOINT_K".into(),
                value: 68.25,
            },
        },
    )?;
    println!("accepted: SETPOINT_K <- 68.25 at event {accepted}");

    // One event of lead is not enough; the intake refuses outright rather
    // than apply a command at the wrong time.
    let refused = sim.submit(
        ArrayTime::ZERO,
        CommandRequest {
            device: "ANT2/CRYO".into(),
            execute_event: 1,
            body: CommandBody::SetProperty {
                property: "SETPOINT_K".into(),
                value: 99.0,
            },
        },
    );
    match refused {
        Err(Error::Late { lead, min_lead, .. }) => {
            println!("refused:  lead {lead} is under the minimum {min_lead}");
        }
        other => panic!("expected a Late rejection, got {other:?}"),
    }

    // Before the tagged event the register still holds its default...
    sim.run_events(5)?;
    let before = sim.get_now(sim.now(), "ANT2/CRYO", "SETPOINT_K")?;
    // ...and the pulse for event 5 applies the staged write.
    sim.run_events(1)?;
    let after = sim.get_now(sim.now(), "ANT2/CRYO", "SETPOINT_K")?;
    println!("before event 5: {} K, after: {} K", before.value, after.value);

    let station = sim.station_of("ANT2/CRYO")?;
    for rec in station.write_journal("ANT2/CRYO")? {
        let latched = rec.latch_event.expect("timed writes always latch");
        println!(
            "journal: reg {:#04x} <- {:?}, transmitted at {}, latched at event {latched}",
            rec.reg, rec.payload, rec.at
        );
    }

    let c = sim.counters();
    println!(
        "counters: {} submitted, {} accepted, {} rejected late, {} dispatched, {} violations",
        c.commands_submitted,
        c.commands_accepted,
        c.commands_rejected_late,
        c.commands_dispatched,
        c.timing_violations
    );
    Ok(())
}
