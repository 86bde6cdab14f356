//! Fringe tracking: the array compensates geometric delay drift by making
//! each synthesizer follow a quadratic phase program. The controller
//! refreshes a frequency word every 48 ms event; the hardware steps its
//! 48-bit accumulator 192 times per event. The chirp word ramps the
//! frequency within the event, so the stepped sum lands on the quadratic
//! exactly instead of falling behind by accel*T^2/2 every period.

use arraysim::{
    default_topology, ArrayTime, CommandBody, CommandRequest, PhaseFunction, Registry, Simulation,
};

/// Signed circular distance between two phases in turns.
fn circ(d: f64) -> f64 {
    let d = d.rem_euclid(1.0);
    if d > 0.5 {
        d - 1.0
    } else {
        d
    }
}

fn main() -> arraysim::Result<()> {
    let registry = Registry::from_doc(default_topology())?;
    let mut sim = Simulation::new(&registry, 31)?;

    let epoch = 8;
    let pf = PhaseFunction {
        phi0_turns: 0.2,
        rate_turns_per_s: 1.5,
        accel_turns_per_s2: 0.25,
        epoch_event: epoch,
    };
    // Same program on two antennas: one with the chirp correction, one
    // deliberately without.
    for (device, chirp_enabled) in [("ANT1/FTS", true), ("ANT2/FTS", false)] {
        sim.submit(
            ArrayTime::ZERO,
            CommandRequest {
                device: device.into(),
                execute_event: epoch,
                body: CommandBody::PhaseProgram { pf, chirp_enabled },
            },
        )?;
    }

    let master = *sim.master();
    println!("tracking error against the quadratic model, in microturns:");
    println!("{:>6} {:>14} {:>14}", "event", "with chirp", "without");
    for n in 0..=72u64 {
        sim.step()?;
        if n < epoch || (n - epoch) % 8 != 0 {
            continue;
        }
        let t = master.event_time(n);
        let model = pf.phase_at((n - epoch) as f64 * 0.048);
        let chirped = sim
            .station_of("ANT1/FTS")?
            .fts_tracking_phase("ANT1/FTS", t)?;
        let plain = sim
            .station_of("ANT2/FTS")?
            .fts_tracking_phase("ANT2/FTS", t)?;
        println!(
            "{n:>6} {:>14.3} {:>14.3}",
            circ(chirped - model) * 1e6,
            circ(plain - model) * 1e6
        );
    }

    // The uncorrected accumulator falls behind by accel*T^2/2 per event.
    let lag_per_event = 0.5 * pf.accel_turns_per_s2 * 0.048 * 0.048;
    println!(
        "\nexpected uncorrected lag: {:.3} microturns per event, {} events elapsed",
        lag_per_event * 1e6,
        72 - epoch
    );

    // Total phase = tracking + switching offset. ANT1 runs Walsh index 1,
    // which flips the phase by half a turn in alternating 250 us slots.
    let station = sim.station_of("ANT1/FTS")?;
    for (label, t) in [
        ("slot 0 of event 72", master.event_time(72)),
        ("slot 1 of event 72", master.event_time(72).plus_ns(250_000)),
    ] {
        println!(
            "{label}: tracking {:.6} turns, with switching offset {:.6} turns",
            station.fts_tracking_phase("ANT1/FTS", t)?,
            station.fts_sample_phase("ANT1/FTS", t)?
        );
    }
    Ok(())
}
