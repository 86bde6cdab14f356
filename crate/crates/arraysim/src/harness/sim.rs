//! The whole-array simulation loop.
//!
//! One `Simulation` owns every station, the master clock, the channel hub
//! and one seeded random stream. Each `step` processes one 48 ms period:
//! pulses go out, the executive transmits the traffic that must latch at
//! the period's closing event, monitors due at the open event are polled,
//! and every collector with samples flushes one batch to the hub.
//!
//! Determinism: state lives in `BTreeMap`s and `Vec`s, all time is integer
//! nanoseconds, and the only random draws are pulse delivery offsets (one
//! per station per event) and message latencies (one per accepted command),
//! always in the same order for the same call sequence. Two simulations
//! built from the same registry, seed and call sequence produce identical
//! archives byte for byte.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::executive::{
    abm_dispatch, schedule_monitors, CommandAction, LeadPolicy, QueuedCommand, TimedCommand,
    WindowPolicy,
};
use crate::framework::config::{Access, AlarmCfg, DeviceKind, Registry};
use crate::framework::device::{AlarmKind, MonitorSpec, PropertyReading, Station};
use crate::fts::{FtsController, PhaseFunction};
use crate::monitor_stream::{ChannelHub, Subscription};
use crate::timebase::{ArrayTime, MasterClock, TimingEvent, EVENT_PERIOD_NS};

use super::scenario::JitterCfg;

/// What a submitted command asks for.
#[derive(Clone, Debug, PartialEq)]
pub enum CommandBody {
    /// Write one property at the tagged event.
    SetProperty { property: String, value: f64 },
    /// Adopt a phase program at the tagged event (synthesizers only).
    PhaseProgram {
        pf: PhaseFunction,
        chirp_enabled: bool,
    },
}

/// A time-tagged command as a client would phrase it.
#[derive(Clone, Debug, PartialEq)]
pub struct CommandRequest {
    pub device: String,
    pub execute_event: u64,
    pub body: CommandBody,
}

/// Intake and dispatch accounting across the whole run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SimCounters {
    pub commands_submitted: u64,
    pub commands_accepted: u64,
    pub commands_rejected_late: u64,
    pub commands_rejected_past: u64,
    pub commands_dispatched: u64,
    pub timing_violations: u64,
    pub window_overruns: u64,
}

/// The array: stations sharing one master clock and one channel hub.
pub struct Simulation {
    master: MasterClock,
    window: WindowPolicy,
    lead: LeadPolicy,
    jitter: JitterCfg,
    stations: Vec<Station>,
    station_index: BTreeMap<String, usize>,
    device_index: BTreeMap<String, usize>,
    hub: ChannelHub,
    rng: ChaCha8Rng,
    next_event: u64,
    finished: bool,
    next_order: u64,
    counters: SimCounters,
    max_period_wire: BTreeMap<String, u64>,
}

impl Simulation {
    /// Build the array from a validated registry with default jitter.
    pub fn new(registry: &Registry, seed: u64) -> Result<Self> {
        Self::with_jitter(registry, seed, JitterCfg::default())
    }

    /// Build the array with explicit jitter bounds.
    pub fn with_jitter(registry: &Registry, seed: u64, jitter: JitterCfg) -> Result<Self> {
        jitter.validate()?;
        let window = WindowPolicy::default();
        window.validate(EVENT_PERIOD_NS)?;

        let mut stations = Vec::new();
        let mut station_index = BTreeMap::new();
        let mut device_index = BTreeMap::new();
        for bus in registry.buses() {
            let idx = stations.len();
            stations.push(Station::build(registry, &bus.name)?);
            station_index.insert(bus.name.clone(), idx);
        }
        for spec in registry.devices() {
            device_index.insert(spec.name.clone(), station_index[&spec.bus]);
        }

        let mut sim = Simulation {
            master: MasterClock::default(),
            window,
            lead: LeadPolicy::default(),
            jitter,
            stations,
            station_index,
            device_index,
            hub: ChannelHub::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            next_event: 0,
            finished: false,
            next_order: 0,
            counters: SimCounters::default(),
            max_period_wire: BTreeMap::new(),
        };

        // Monitors and alarms declared in the configuration come up with the
        // array, feeding the default telemetry channel from event 0.
        for spec in registry.devices() {
            for prop in &spec.properties {
                if let Some(period) = prop.monitor_period_events {
                    sim.attach_monitor(MonitorSpec {
                        device: spec.name.clone(),
                        property: prop.name.clone(),
                        period_events: period,
                        channel: "telemetry".into(),
                        start_event: 0,
                    })?;
                }
                if let Some(alarm) = prop.alarm {
                    sim.station_of_mut(&spec.name)?
                        .attach_alarm(&spec.name, &prop.name, alarm)?;
                }
            }
        }
        Ok(sim)
    }

    pub fn master(&self) -> &MasterClock {
        &self.master
    }

    /// Start of the next unprocessed period.
    pub fn now(&self) -> ArrayTime {
        self.master.event_time(self.next_event)
    }

    /// Sequence number of the next unprocessed event.
    pub fn next_event(&self) -> u64 {
        self.next_event
    }

    pub fn counters(&self) -> SimCounters {
        self.counters
    }

    /// Worst observed wire time inside one period, per station.
    pub fn max_period_wire(&self) -> &BTreeMap<String, u64> {
        &self.max_period_wire
    }

    pub fn stations(&self) -> impl Iterator<Item = &Station> {
        self.stations.iter()
    }

    pub fn station(&self, name: &str) -> Result<&Station> {
        match self.station_index.get(name) {
            Some(&idx) => Ok(&self.stations[idx]),
            None => Err(Error::NameNotFound(format!("station {name:?}"))),
        }
    }

    pub fn station_mut(&mut self, name: &str) -> Result<&mut Station> {
        match self.station_index.get(name) {
            Some(&idx) => Ok(&mut self.stations[idx]),
            None => Err(Error::NameNotFound(format!("station {name:?}"))),
        }
    }

    /// Station owning a device.
    pub fn station_of(&self, device: &str) -> Result<&Station> {
        match self.device_index.get(device) {
            Some(&idx) => Ok(&self.stations[idx]),
            None => Err(Error::NameNotFound(format!("device {device:?}"))),
        }
    }

    fn station_of_mut(&mut self, device: &str) -> Result<&mut Station> {
        match self.device_index.get(device) {
            Some(&idx) => Ok(&mut self.stations[idx]),
            None => Err(Error::NameNotFound(format!("device {device:?}"))),
        }
    }

    /// Attach a monitor, routed to the device's station.
    pub fn attach_monitor(&mut self, spec: MonitorSpec) -> Result<u64> {
        let device = spec.device.clone();
        self.station_of_mut(&device)?.attach_monitor(spec)
    }

    /// Attach an alarm, routed to the device's station.
    pub fn attach_alarm(&mut self, device: &str, property: &str, cfg: AlarmCfg) -> Result<()> {
        self.station_of_mut(device)?.attach_alarm(device, property, cfg)
    }

    /// Subscribe to a channel. Subscribers receive every batch published
    /// after this call; subscribe before stepping for a complete stream.
    pub fn subscribe(&mut self, channel: &str) -> Subscription {
        self.hub.subscribe(channel)
    }

    /// Every channel named by an attached monitor, sorted.
    pub fn channels(&self) -> Vec<String> {
        let mut names = BTreeSet::new();
        for st in &self.stations {
            for m in &st.monitors {
                names.insert(m.spec.channel.clone());
            }
        }
        names.into_iter().collect()
    }

    /// Total samples accepted by collectors across the array.
    pub fn samples_collected(&self) -> u64 {
        self.stations.iter().map(Station::samples_collected).sum()
    }

    /// Alarm edges across the array: (raised, cleared).
    pub fn alarm_edges(&self) -> (u64, u64) {
        let mut raised = 0;
        let mut cleared = 0;
        for st in &self.stations {
            for ev in st.alarm_log() {
                match ev.kind {
                    AlarmKind::Raised => raised += 1,
                    AlarmKind::Cleared => cleared += 1,
                }
            }
        }
        (raised, cleared)
    }

    /// Submit a time-tagged command as of wall instant `at`. The command is
    /// validated now (lead, names, access, range, encodability), stamped
    /// with a message latency, and queued on the owning station. Returns
    /// the event it will execute at.
    pub fn submit(&mut self, at: ArrayTime, req: CommandRequest) -> Result<u64> {
        self.counters.commands_submitted += 1;
        let now_event = self.master.event_at_or_after(at)?;
        if now_event < self.next_event {
            return Err(Error::Usage(format!(
                "submission instant {at} precedes the simulation cursor (event {})",
                self.next_event
            )));
        }
        match self.lead.check(req.execute_event, now_event) {
            Ok(()) => {}
            Err(e @ Error::Late { .. }) => {
                self.counters.commands_rejected_late += 1;
                return Err(e);
            }
            Err(e @ Error::Past { .. }) => {
                self.counters.commands_rejected_past += 1;
                return Err(e);
            }
            Err(e) => return Err(e),
        }

        let idx = *self
            .device_index
            .get(&req.device)
            .ok_or_else(|| Error::NameNotFound(format!("device {:?}", req.device)))?;
        let (window_slot, label, action) = {
            let entry = self.stations[idx].entry(&req.device)?;
            match &req.body {
                CommandBody::SetProperty { property, value } => {
                    let prop = entry.spec.property(property).ok_or_else(|| {
                        Error::NameNotFound(format!(
                            "property {property:?} of device {:?}",
                            req.device
                        ))
                    })?;
                    if prop.access != Access::ReadWrite {
                        return Err(Error::Usage(format!(
                            "property {property:?} of {:?} is read-only",
                            req.device
                        )));
                    }
                    if let Some([lo, hi]) = prop.range {
                        if *value < lo || *value > hi {
                            return Err(Error::Range(format!(
                                "{value} outside [{lo}, {hi}] for {}:{property}",
                                req.device
                            )));
                        }
                    }
                    let payload = prop.codec.encode(*value)?;
                    (
                        entry.spec.window_slot(),
                        property.clone(),
                        CommandAction::RegisterWrite {
                            reg: prop.rca,
                            payload,
                        },
                    )
                }
                CommandBody::PhaseProgram { pf, chirp_enabled } => {
                    if entry.spec.kind != DeviceKind::Fts {
                        return Err(Error::Usage(format!(
                            "{:?} is not a synthesizer, cannot adopt a phase program",
                            req.device
                        )));
                    }
                    // Reject programs whose activation words do not fit the
                    // registers, before accepting the command.
                    let mut probe = FtsController::new();
                    probe.arm(*pf, *chirp_enabled, req.execute_event);
                    probe.tracking_words(req.execute_event, &self.master)?;
                    (
                        entry.spec.window_slot(),
                        "phase_program".into(),
                        CommandAction::PhaseProgram {
                            pf: *pf,
                            chirp_enabled: *chirp_enabled,
                        },
                    )
                }
            }
        };

        let latency = self.rng.gen_range(0..=self.jitter.message_ns);
        let order = self.next_order;
        self.next_order += 1;
        self.stations[idx].queue.push(QueuedCommand {
            cmd: TimedCommand {
                device: req.device,
                label,
                execute_event: req.execute_event,
                window_slot,
                action,
            },
            arrival: at.plus_ns(latency),
            order,
        });
        self.counters.commands_accepted += 1;
        Ok(req.execute_event)
    }

    /// Immediate property write at wall instant `at`, outside the event
    /// machinery. The transaction claims the wire ahead of the period's
    /// scheduled traffic, so keep immediate writes sparse.
    pub fn set_now(
        &mut self,
        at: ArrayTime,
        device: &str,
        property: &str,
        value: f64,
    ) -> Result<ArrayTime> {
        let st = self.station_of_mut(device)?;
        let handle = st.resolve(device)?;
        let outcome = st.set_property_now(&handle, property, value, at);
        st.release(&handle)?;
        outcome
    }

    /// Immediate property read at wall instant `at`.
    pub fn get_now(&mut self, at: ArrayTime, device: &str, property: &str) -> Result<PropertyReading> {
        let st = self.station_of_mut(device)?;
        let handle = st.resolve(device)?;
        let outcome = st.get_property(&handle, property, at);
        st.release(&handle)?;
        outcome
    }

    /// Process one period: deliver the opening pulse, transmit the traffic
    /// latching at the closing event, poll due monitors, flush batches.
    /// Returns the event that opened the period.
    pub fn step(&mut self) -> Result<TimingEvent> {
        if self.finished {
            return Err(Error::Usage("simulation already finished".into()));
        }
        let n = self.next_event;
        let event = self.master.event(n);
        let upcoming = self.master.event(n + 1);

        // Pulse broadcast. Each station sees the edge with its own delivery
        // offset; the draw is discarded because slave clocks count pulses,
        // which is exactly the jitter immunity the design claims. Drawing it
        // keeps the random stream shaped like the traffic it models.
        for st in &mut self.stations {
            let _delivery_offset_ns = self.rng.gen_range(0..=self.jitter.pulse_ns);
            st.on_pulse(event);
        }

        for st in &mut self.stations {
            let report = abm_dispatch(st, upcoming, &self.window, &self.master)?;
            self.counters.commands_dispatched += report.stats.commands_dispatched;
            self.counters.timing_violations += report.stats.timing_violations;
            self.counters.window_overruns += report.stats.window_overruns;
        }

        for st in &mut self.stations {
            schedule_monitors(st, event, &self.master)?;
        }

        for st in &mut self.stations {
            for (channel, batch) in st.flush_collectors(event) {
                self.hub.publish(&channel, batch);
            }
            let wire = st.bus().occupancy_between(event.tai, upcoming.tai);
            let worst = self.max_period_wire.entry(st.name().to_string()).or_insert(0);
            *worst = (*worst).max(wire);
        }

        self.next_event = n + 1;
        Ok(event)
    }

    /// Run `count` periods.
    pub fn run_events(&mut self, count: u64) -> Result<()> {
        for _ in 0..count {
            self.step()?;
        }
        Ok(())
    }

    /// Deliver the final pulse so writes dispatched for the last period
    /// latch, without opening another period. Call exactly once, after the
    /// last `step`.
    pub fn finish(&mut self) -> Result<TimingEvent> {
        if self.finished {
            return Err(Error::Usage("simulation already finished".into()));
        }
        let event = self.master.event(self.next_event);
        for st in &mut self.stations {
            let _delivery_offset_ns = self.rng.gen_range(0..=self.jitter.pulse_ns);
            st.on_pulse(event);
        }
        self.finished = true;
        Ok(event)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::default_topology;
    use crate::monitor_stream::verify_stream;

    fn sim() -> Simulation {
        let registry = Registry::from_doc(default_topology()).unwrap();
        Simulation::new(&registry, 17).unwrap()
    }

    #[test]
    fn configured_monitors_come_up_with_the_array() {
        let mut s = sim();
        let sub = s.subscribe("telemetry");
        s.run_events(3).unwrap();
        let batches = sub.drain();
        assert!(!batches.is_empty());
        // Every per-event temperature monitor fired at events 1 and 2.
        let temp_samples: usize = batches
            .iter()
            .flat_map(|b| &b.samples)
            .filter(|s| s.property == "TEMP_K")
            .count();
        assert_eq!(temp_samples, 6);
    }

    #[test]
    fn submitted_command_latches_at_its_event() {
        let mut s = sim();
        let exec = s
            .submit(
                ArrayTime::ZERO,
                CommandRequest {
                    device: "ANT2/CRYO".into(),
                    execute_event: 4,
                    body: CommandBody::SetProperty {
                        property: "SETPOINT_K".into(),
                        value: 81.25,
                    },
                },
            )
            .unwrap();
        assert_eq!(exec, 4);
        s.run_events(4).unwrap();
        s.finish().unwrap();

        let journal = s.station("ANT2").unwrap().write_journal("ANT2/CRYO").unwrap();
        let rec = journal
            .iter()
            .find(|r| r.latch_event == Some(4))
            .expect("write latched at event 4");
        assert_eq!(rec.at, s.master().event_time(4));
        assert_eq!(s.counters().commands_dispatched, 1);
        assert_eq!(s.counters().timing_violations, 0);
    }

    #[test]
    fn rejections_are_counted_and_leave_no_trace() {
        let mut s = sim();
        let late = s.submit(
            s.master().event_time(10),
            CommandRequest {
                device: "ANT1/CRYO".into(),
                execute_event: 11,
                body: CommandBody::SetProperty {
                    property: "SETPOINT_K".into(),
                    value: 80.0,
                },
            },
        );
        assert!(matches!(late, Err(Error::Late { .. })));
        let past = s.submit(
            s.master().event_time(10),
            CommandRequest {
                device: "ANT1/CRYO".into(),
                execute_event: 9,
                body: CommandBody::SetProperty {
                    property: "SETPOINT_K".into(),
                    value: 80.0,
                },
            },
        );
        assert!(matches!(past, Err(Error::Past { .. })));

        let c = s.counters();
        assert_eq!(c.commands_submitted, 2);
        assert_eq!(c.commands_accepted, 0);
        assert_eq!(c.commands_rejected_late, 1);
        assert_eq!(c.commands_rejected_past, 1);

        s.run_events(12).unwrap();
        s.finish().unwrap();
        let journal = s.station("ANT1").unwrap().write_journal("ANT1/CRYO").unwrap();
        assert!(journal.is_empty());
        assert_eq!(s.counters().commands_dispatched, 0);
    }

    #[test]
    fn submission_in_the_simulators_past_is_refused() {
        let mut s = sim();
        s.run_events(5).unwrap();
        let err = s
            .submit(
                ArrayTime::ZERO,
                CommandRequest {
                    device: "ANT1/CRYO".into(),
                    execute_event: 10,
                    body: CommandBody::SetProperty {
                        property: "SETPOINT_K".into(),
                        value: 80.0,
                    },
                },
            )
            .unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn same_seed_same_archive_stream() {
        let run = |seed: u64| -> Vec<String> {
            let registry = Registry::from_doc(default_topology()).unwrap();
            let mut s = Simulation::new(&registry, seed).unwrap();
            let sub = s.subscribe("telemetry");
            s.submit(
                ArrayTime::ZERO,
                CommandRequest {
                    device: "ANT1/CRYO".into(),
                    execute_event: 3,
                    body: CommandBody::SetProperty {
                        property: "SETPOINT_K".into(),
                        value: 92.5,
                    },
                },
            )
            .unwrap();
            s.run_events(8).unwrap();
            s.finish().unwrap();
            sub.drain()
                .iter()
                .flat_map(|b| b.samples.iter().map(|x| format!("{x:?}")))
                .collect()
        };
        assert_eq!(run(5), run(5));
    }

    #[test]
    fn batch_streams_are_contiguous_per_station() {
        let mut s = sim();
        let sub = s.subscribe("telemetry");
        s.run_events(10).unwrap();
        let batches = sub.drain();
        let mut by_source: BTreeMap<String, Vec<_>> = BTreeMap::new();
        for b in batches {
            by_source.entry(b.source.clone()).or_default().push(b);
        }
        assert!(!by_source.is_empty());
        for (_, group) in by_source {
            assert!(verify_stream(&group, group[0].batch_seq));
        }
    }

    #[test]
    fn phase_program_on_a_generic_device_is_refused() {
        let mut s = sim();
        let err = s
            .submit(
                ArrayTime::ZERO,
                CommandRequest {
                    device: "ANT1/CRYO".into(),
                    execute_event: 4,
                    body: CommandBody::PhaseProgram {
                        pf: PhaseFunction {
                            phi0_turns: 0.0,
                            rate_turns_per_s: 1.0,
                            accel_turns_per_s2: 0.0,
                            epoch_event: 4,
                        },
                        chirp_enabled: true,
                    },
                },
            )
            .unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn phase_program_tracks_after_activation() {
        let mut s = sim();
        let pf = PhaseFunction {
            phi0_turns: 0.125,
            rate_turns_per_s: 2.5,
            accel_turns_per_s2: 0.0,
            epoch_event: 4,
        };
        s.submit(
            ArrayTime::ZERO,
            CommandRequest {
                device: "ANT3/FTS".into(),
                execute_event: 4,
                body: CommandBody::PhaseProgram {
                    pf,
                    chirp_enabled: false,
                },
            },
        )
        .unwrap();
        s.run_events(8).unwrap();
        s.finish().unwrap();

        let st = s.station("ANT3").unwrap();
        let t = s.master().event_time(8);
        let got = st.fts_tracking_phase("ANT3/FTS", t).unwrap();
        let want = pf.phase_at(0.048 * 4.0).rem_euclid(1.0);
        let err = (got - want).rem_euclid(1.0);
        let err = err.min(1.0 - err);
        assert!(err < 1e-9, "tracking error {err}");
    }
}
