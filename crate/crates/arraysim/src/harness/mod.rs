//! Whole-array runs: build, script, execute, report.
//!
//! This module is the top of the crate: [`Simulation`] wires stations from
//! a validated registry, [`Scenario`] describes a run as data, and
//! [`run_scenario`] executes one and leaves `archive.csv`, `report.json`
//! and `config.json` in an output directory. [`default_topology`] is a
//! small three-antenna array used by the examples and the binary.

pub mod report;
pub mod scenario;
pub mod sim;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::framework::codec::Codec;
use crate::framework::config::{
    Access, AlarmCfg, BusCfg, ConfigDoc, DeviceCfg, DeviceKind, Lifecycle, PropertyCfg, Registry,
    ValueKind,
};
use crate::fts::walsh::{build_pattern, cross_demod, SLOTS_PER_PATTERN};
use crate::fts::PhaseFunction;
use crate::monitor_stream::Archiver;
use crate::simbus::BusModel;
use crate::timebase::{ArrayTime, EVENT_PERIOD_NS};

pub use report::RunReport;
pub use scenario::{AlarmEntry, JitterCfg, MonitorEntry, Scenario, ScriptEntry};
pub use sim::{CommandBody, CommandRequest, SimCounters, Simulation};

/// Whole periods a run of `duration_s` seconds simulates.
pub fn events_in(duration_s: f64) -> u64 {
    if !(duration_s > 0.0) || !duration_s.is_finite() {
        return 0;
    }
    (duration_s * 1e9).floor() as u64 / EVENT_PERIOD_NS
}

fn prop(
    name: &str,
    access: Access,
    kind: ValueKind,
    units: &str,
    range: Option<[f64; 2]>,
    rca: u16,
    codec: Codec,
) -> PropertyCfg {
    PropertyCfg {
        name: name.into(),
        access,
        kind,
        units: units.into(),
        range,
        rca,
        codec,
        monitor_period_events: None,
        alarm: None,
        default: None,
    }
}

/// A small three-antenna array with a central weather station: each antenna
/// bus carries a synthesizer and a cryostat controller, and the
/// configuration declares eleven periodic monitors and six alarms.
pub fn default_topology() -> ConfigDoc {
    let mut buses: Vec<BusCfg> = ["ANT1", "ANT2", "ANT3", "CENTER"]
        .iter()
        .map(|name| BusCfg {
            name: (*name).into(),
            bitrate_bps: 1_000_000,
            response_timeout_ns: 1_000_000,
        })
        .collect();
    buses.sort_by(|a, b| a.name.cmp(&b.name));

    let mut devices = Vec::new();
    for (i, ant) in ["ANT1", "ANT2", "ANT3"].iter().enumerate() {
        let walsh_index = (i + 1) as u64;

        let mut status = prop(
            "STATUS",
            Access::ReadOnly,
            ValueKind::Integer,
            "",
            None,
            0x10,
            Codec::Uint { bytes: 8 },
        );
        // Health register every 6 s: slow enough to stay out of the way,
        // fast enough to show up in short demonstration runs.
        status.monitor_period_events = Some(125);
        devices.push(DeviceCfg {
            name: format!("{ant}/FTS"),
            kind: DeviceKind::Fts,
            lifecycle: Lifecycle::Persistent,
            bus: (*ant).into(),
            node: 1,
            parent: None,
            params: [
                ("walsh_index".to_string(), serde_json::json!(walsh_index)),
                ("window_slot".to_string(), serde_json::json!(1)),
            ]
            .into_iter()
            .collect(),
            properties: vec![
                prop(
                    "PHASE_SWITCH_INDEX",
                    Access::ReadWrite,
                    ValueKind::Integer,
                    "",
                    Some([1.0, 63.0]),
                    0x04,
                    Codec::Uint { bytes: 1 },
                ),
                status,
            ],
        });

        let mut temp = prop(
            "TEMP_K",
            Access::ReadOnly,
            ValueKind::FixedPoint,
            "K",
            Some([0.0, 400.0]),
            0x01,
            Codec::UFixed {
                bytes: 2,
                scale: 0.01,
            },
        );
        temp.monitor_period_events = Some(1);
        temp.alarm = Some(AlarmCfg {
            lo: 70.0,
            hi: 85.0,
            hysteresis: 1.0,
        });
        temp.default = Some(77.0);

        let mut setpoint = prop(
            "SETPOINT_K",
            Access::ReadWrite,
            ValueKind::FixedPoint,
            "K",
            Some([4.0, 300.0]),
            0x02,
            Codec::UFixed {
                bytes: 2,
                scale: 0.01,
            },
        );
        setpoint.default = Some(77.0);

        let mut heater = prop(
            "HEATER_W",
            Access::ReadWrite,
            ValueKind::FixedPoint,
            "W",
            Some([0.0, 50.0]),
            0x03,
            Codec::UFixed {
                bytes: 2,
                scale: 0.1,
            },
        );
        heater.monitor_period_events = Some(21);
        heater.alarm = Some(AlarmCfg {
            lo: 0.0,
            hi: 30.0,
            hysteresis: 2.0,
        });
        heater.default = Some(5.0);

        devices.push(DeviceCfg {
            name: format!("{ant}/CRYO"),
            kind: DeviceKind::Generic,
            lifecycle: Lifecycle::Transient,
            bus: (*ant).into(),
            node: 2,
            parent: None,
            params: [("window_slot".to_string(), serde_json::json!(2))]
                .into_iter()
                .collect(),
            properties: vec![temp, setpoint, heater],
        });
    }

    let mut wind = prop(
        "WIND_MS",
        Access::ReadOnly,
        ValueKind::FixedPoint,
        "m/s",
        Some([0.0, 60.0]),
        0x01,
        Codec::UFixed {
            bytes: 2,
            scale: 0.1,
        },
    );
    wind.monitor_period_events = Some(125);
    wind.default = Some(4.2);

    let mut air = prop(
        "TEMP_C",
        Access::ReadOnly,
        ValueKind::FixedPoint,
        "degC",
        Some([-40.0, 50.0]),
        0x02,
        Codec::Fixed {
            bytes: 2,
            scale: 0.1,
        },
    );
    air.monitor_period_events = Some(125);
    air.default = Some(11.5);

    devices.push(DeviceCfg {
        name: "CENTER/WX".into(),
        kind: DeviceKind::Generic,
        lifecycle: Lifecycle::Persistent,
        bus: "CENTER".into(),
        node: 3,
        parent: None,
        params: [("window_slot".to_string(), serde_json::json!(0))]
            .into_iter()
            .collect(),
        properties: vec![wind, air],
    });

    ConfigDoc { buses, devices }
}

/// The default scenario: the three-antenna topology plus a script that
/// exercises every command path. Two cryostat setpoint changes, fringe
/// tracking on all three synthesizers (one of them with the chirp
/// correction deliberately off), a phase switching pattern change, a heater
/// excursion that raises and then clears an alarm, and one under-lead
/// command that the intake must reject. Valid for any duration of at least
/// 231 events (about 11.1 s).
pub fn demo_scenario() -> Scenario {
    let mut s = Scenario::bare(default_topology());
    s.script = vec![
        ScriptEntry::TimedWrite {
            at_s: 0.5,
            device: "ANT1/CRYO".into(),
            property: "SETPOINT_K".into(),
            value: 82.5,
            execute_event: 30,
        },
        ScriptEntry::PhaseProgram {
            at_s: 1.0,
            device: "ANT1/FTS".into(),
            execute_event: 64,
            phi0_turns: 0.1,
            rate_turns_per_s: 0.7,
            accel_turns_per_s2: 0.002,
            chirp: true,
        },
        ScriptEntry::PhaseProgram {
            at_s: 1.0,
            device: "ANT2/FTS".into(),
            execute_event: 64,
            phi0_turns: 0.0,
            rate_turns_per_s: -0.35,
            accel_turns_per_s2: 0.001,
            chirp: true,
        },
        ScriptEntry::PhaseProgram {
            at_s: 1.2,
            device: "ANT3/FTS".into(),
            execute_event: 64,
            phi0_turns: 0.25,
            rate_turns_per_s: 1.3,
            accel_turns_per_s2: 0.0,
            chirp: false,
        },
        // Register latches at event 60; the generator adopts the pattern at
        // the next 64-event epoch boundary.
        ScriptEntry::TimedWrite {
            at_s: 2.0,
            device: "ANT3/FTS".into(),
            property: "PHASE_SWITCH_INDEX".into(),
            value: 7.0,
            execute_event: 60,
        },
        // Heater excursion past the 30 W alarm threshold, pulled back below
        // the hysteresis band three seconds later: one raise, one clear.
        ScriptEntry::SetNow {
            at_s: 3.0,
            device: "ANT1/CRYO".into(),
            property: "HEATER_W".into(),
            value: 45.0,
        },
        ScriptEntry::SetNow {
            at_s: 6.0,
            device: "ANT1/CRYO".into(),
            property: "HEATER_W".into(),
            value: 5.0,
        },
        // Submitted one event short of the minimum lead: rejected Late.
        ScriptEntry::TimedWrite {
            at_s: 10.0,
            device: "ANT2/CRYO".into(),
            property: "SETPOINT_K".into(),
            value: 75.0,
            execute_event: 210,
        },
        ScriptEntry::TimedWrite {
            at_s: 10.5,
            device: "ANT2/CRYO".into(),
            property: "SETPOINT_K".into(),
            value: 75.0,
            execute_event: 230,
        },
    ];
    s
}

/// Result of a phase switching separability check.
#[derive(Clone, Debug)]
pub struct OrthogonalityCheck {
    pub antennas: u8,
    pub pairs_checked: u64,
    /// (index a, index b, in-phase sum, quadrature sum) for each pair that
    /// failed to demodulate to the expected value.
    pub failures: Vec<(u8, u8, i64, i64)>,
}

impl OrthogonalityCheck {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Demodulate every ordered pair of switching patterns among `antennas`
/// distinct Walsh indices (1 through `antennas`): a pattern against itself
/// must recover the full pattern, and against any other must cancel to zero
/// in both quadratures.
pub fn check_orthogonality(antennas: u8) -> Result<OrthogonalityCheck> {
    if antennas == 0 || antennas > 63 {
        return Err(Error::Domain(format!(
            "{antennas} antennas: distinct switching indices run 1..=63"
        )));
    }
    let patterns: Vec<_> = (1..=antennas)
        .map(build_pattern)
        .collect::<Result<_>>()?;
    let mut failures = Vec::new();
    let mut pairs = 0;
    for a in &patterns {
        for b in &patterns {
            let (i, q) = cross_demod(a, b);
            let want_i = if a.walsh_index() == b.walsh_index() {
                SLOTS_PER_PATTERN as i64
            } else {
                0
            };
            if (i, q) != (want_i, 0) {
                failures.push((a.walsh_index(), b.walsh_index(), i, q));
            }
            pairs += 1;
        }
    }
    Ok(OrthogonalityCheck {
        antennas,
        pairs_checked: pairs,
        failures,
    })
}

/// Wire arithmetic of the polled field bus for one payload size.
#[derive(Clone, Copy, Debug)]
pub struct ThroughputReport {
    pub dlc: usize,
    pub frame_bits: u64,
    pub frame_ns: u64,
    pub round_trip_ns: u64,
    pub ops_per_second: f64,
}

/// Sustained polled operation rate for `dlc`-byte payloads on the default
/// 1 Mbps bus: each operation is one request frame plus one equally sized
/// response frame.
pub fn throughput(dlc: usize) -> Result<ThroughputReport> {
    let model = BusModel::default();
    let ops_per_second = model.max_polled_ops_per_second(dlc)?;
    let frame_ns = model.frame_duration_ns(dlc);
    Ok(ThroughputReport {
        dlc,
        frame_bits: model.frame_overhead_bits + 8 * dlc as u64,
        frame_ns,
        round_trip_ns: 2 * frame_ns,
        ops_per_second,
    })
}

/// Paths a finished run left behind, plus its report.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub report: RunReport,
    pub archive_path: PathBuf,
    pub report_path: PathBuf,
    pub config_path: PathBuf,
}

fn apply_entry(sim: &mut Simulation, entry: &ScriptEntry) -> Result<()> {
    let at = ArrayTime::from_ns(entry.at_ns());
    match entry {
        ScriptEntry::TimedWrite {
            device,
            property,
            value,
            execute_event,
            ..
        } => {
            let outcome = sim.submit(
                at,
                CommandRequest {
                    device: device.clone(),
                    execute_event: *execute_event,
                    body: CommandBody::SetProperty {
                        property: property.clone(),
                        value: *value,
                    },
                },
            );
            match outcome {
                // Lead rejections are part of a run's accounting, not a
                // reason to abort it.
                Ok(_) | Err(Error::Late { .. }) | Err(Error::Past { .. }) => Ok(()),
                Err(e) => Err(e),
            }
        }
        ScriptEntry::PhaseProgram {
            device,
            execute_event,
            phi0_turns,
            rate_turns_per_s,
            accel_turns_per_s2,
            chirp,
            ..
        } => {
            let pf = PhaseFunction {
                phi0_turns: *phi0_turns,
                rate_turns_per_s: *rate_turns_per_s,
                accel_turns_per_s2: *accel_turns_per_s2,
                epoch_event: *execute_event,
            };
            let outcome = sim.submit(
                at,
                CommandRequest {
                    device: device.clone(),
                    execute_event: *execute_event,
                    body: CommandBody::PhaseProgram {
                        pf,
                        chirp_enabled: *chirp,
                    },
                },
            );
            match outcome {
                Ok(_) | Err(Error::Late { .. }) | Err(Error::Past { .. }) => Ok(()),
                Err(e) => Err(e),
            }
        }
        ScriptEntry::SetNow {
            device,
            property,
            value,
            ..
        } => sim.set_now(at, device, property, *value).map(|_| ()),
    }
}

/// Execute a scenario for `duration_s` seconds and leave `archive.csv`,
/// `report.json` and `config.json` in `out_dir`. The archive holds every
/// sample every monitor produced, in publication order; two runs with the
/// same scenario, duration and seed produce byte-identical archives.
pub fn run_scenario(
    scenario: &Scenario,
    duration_s: f64,
    seed: u64,
    out_dir: &Path,
) -> Result<RunOutcome> {
    let started = Instant::now();
    let events = events_in(duration_s);
    if events == 0 {
        return Err(Error::Domain(format!(
            "duration {duration_s} s is shorter than one {EVENT_PERIOD_NS} ns period"
        )));
    }
    scenario.validate(events)?;

    let registry = Registry::from_doc(scenario.topology.clone())?;
    let mut sim = Simulation::with_jitter(&registry, seed, scenario.jitter)?;
    for m in &scenario.monitors {
        sim.attach_monitor(crate::framework::device::MonitorSpec {
            device: m.device.clone(),
            property: m.property.clone(),
            period_events: m.period_events,
            channel: m.channel.clone(),
            start_event: m.start_event,
        })?;
    }
    for a in &scenario.alarms {
        sim.attach_alarm(
            &a.device,
            &a.property,
            AlarmCfg {
                lo: a.lo,
                hi: a.hi,
                hysteresis: a.hysteresis,
            },
        )?;
    }

    fs::create_dir_all(out_dir)?;
    let archive_path = out_dir.join("archive.csv");
    let report_path = out_dir.join("report.json");
    let config_path = out_dir.join("config.json");

    let subs = sim
        .channels()
        .iter()
        .map(|c| sim.subscribe(c))
        .collect::<Vec<_>>();
    let sink = BufWriter::new(fs::File::create(&archive_path)?);
    let mut archiver = Archiver::new(subs, sink)?;

    let mut order: Vec<usize> = (0..scenario.script.len()).collect();
    order.sort_by_key(|&i| scenario.script[i].at_ns());
    let mut cursor = 0;

    for n in 0..events {
        let period_end = sim.master().event_time(n + 1).as_ns();
        while cursor < order.len() && scenario.script[order[cursor]].at_ns() < period_end {
            apply_entry(&mut sim, &scenario.script[order[cursor]])?;
            cursor += 1;
        }
        sim.step()?;
        archiver.drain()?;
    }
    sim.finish()?;

    let (mut sink, archived_records) = archiver.finish()?;
    sink.flush()?;
    drop(sink);

    let (alarms_raised, alarms_cleared) = sim.alarm_edges();
    let report = RunReport {
        events,
        duration_s,
        seed,
        stations: registry.buses().iter().map(|b| b.name.clone()).collect(),
        counters: sim.counters(),
        samples_collected: sim.samples_collected(),
        archived_records,
        alarms_raised,
        alarms_cleared,
        max_period_wire_ns: sim.max_period_wire().clone(),
        wall_clock_ms: started.elapsed().as_millis() as u64,
    };

    let mut report_json = serde_json::to_string_pretty(&report)?;
    report_json.push('\n');
    fs::write(&report_path, report_json)?;
    fs::write(&config_path, registry.emit())?;

    Ok(RunOutcome {
        report,
        archive_path,
        report_path,
        config_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duration_to_events() {
        assert_eq!(events_in(60.0), 1250);
        assert_eq!(events_in(0.9), 18);
        assert_eq!(events_in(0.048), 1);
        assert_eq!(events_in(0.047), 0);
        assert_eq!(events_in(-1.0), 0);
    }

    #[test]
    fn default_topology_validates() {
        let registry = Registry::from_doc(default_topology()).unwrap();
        assert_eq!(registry.buses().len(), 4);
        assert_eq!(registry.devices().len(), 7);
        let monitors: u64 = registry
            .devices()
            .iter()
            .flat_map(|d| &d.properties)
            .filter(|p| p.monitor_period_events.is_some())
            .count() as u64;
        assert_eq!(monitors, 11);
    }

    #[test]
    fn demo_scenario_validates_and_runs_through_the_intake() {
        let demo = demo_scenario();
        demo.validate(events_in(60.0)).unwrap();
        demo.validate(events_in(15.0)).unwrap();
        // The farthest-out execution tag bounds the shortest legal run.
        assert!(demo.validate(200).is_err());

        // Everything round-trips as data.
        let text = serde_json::to_string_pretty(&demo).unwrap();
        let back = Scenario::parse(&text).unwrap();
        assert_eq!(back, demo);
    }

    #[test]
    fn default_topology_round_trips_through_emit() {
        let registry = Registry::from_doc(default_topology()).unwrap();
        let text = registry.emit();
        let back = crate::framework::config::load_config(&text).unwrap();
        assert_eq!(back.doc(), registry.doc());
    }

    #[test]
    fn orthogonality_check_full_set() {
        let chk = check_orthogonality(63).unwrap();
        assert!(chk.ok());
        assert_eq!(chk.pairs_checked, 63 * 63);
        assert!(check_orthogonality(0).is_err());
        assert!(check_orthogonality(64).is_err());
    }

    #[test]
    fn throughput_reference_points() {
        let full = throughput(8).unwrap();
        assert_eq!(full.frame_bits, 131);
        assert_eq!(full.frame_ns, 131_000);
        assert_eq!(full.round_trip_ns, 262_000);
        assert_eq!(full.ops_per_second, 3816.793893129771);

        let empty = throughput(0).unwrap();
        assert_eq!(empty.ops_per_second, 7462.686567164179);
        assert!(throughput(9).is_err());
    }
}
