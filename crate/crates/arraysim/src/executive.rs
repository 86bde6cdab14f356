//! The executive: time-tagged commands and the per-period bus schedule.
//!
//! A command names the event at which it must take effect. Intake enforces a
//! minimum lead of two events; dispatch then transmits the command's
//! register writes during the period before its event, as latched writes,
//! so the hardware applies them exactly on the pulse. The period is carved
//! into 16 windows of 3 ms and each device's traffic is laid into its
//! configured window; several transactions in one window run back to back.
//!
//! Why a lead of two is always enough: a command submitted at wall time `t`
//! is stamped `now_event = E_n`, the first event at or after `t`, and must
//! target `E >= E_n + 2`. Its message reaches the station before `t + 48 ms
//! <= T_{E_n} + 48 ms = T_{E_n + 1} <= T_{E - 1}`, the start of the dispatch
//! period, so dispatch never misses a properly accepted command.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::framework::codec::rca_write_latched;
use crate::framework::config::DeviceKind;
use crate::framework::device::Station;
use crate::fts::{self, PhaseFunction};
use crate::monitor_stream::Sample;
use crate::simbus::{BusTransaction, NodeAddress};
use crate::timebase::{ArrayTime, MasterClock, TimingEvent};

/// How a period is carved into command windows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowPolicy {
    pub slots_per_period: u32,
    pub slot_width_ns: u64,
}

impl Default for WindowPolicy {
    fn default() -> Self {
        WindowPolicy {
            slots_per_period: 16,
            slot_width_ns: 3_000_000,
        }
    }
}

impl WindowPolicy {
    /// The windows must tile the period exactly.
    pub fn validate(&self, period_ns: u64) -> Result<()> {
        if u64::from(self.slots_per_period) * self.slot_width_ns != period_ns {
            return Err(Error::Usage(format!(
                "{} windows of {} ns do not tile a {} ns period",
                self.slots_per_period, self.slot_width_ns, period_ns
            )));
        }
        Ok(())
    }
}

/// Intake rule for time-tagged commands.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LeadPolicy {
    pub min_lead_events: u64,
}

impl Default for LeadPolicy {
    fn default() -> Self {
        LeadPolicy { min_lead_events: 2 }
    }
}

impl LeadPolicy {
    /// Accepts or rejects an (execute_event, now_event) pair. An event
    /// before `now_event` is gone for good (Past); one at or after it but
    /// closer than the minimum lead cannot be delivered in time (Late).
    pub fn check(&self, execute_event: u64, now_event: u64) -> Result<()> {
        if execute_event < now_event {
            return Err(Error::Past {
                execute_event,
                now_event,
            });
        }
        let lead = execute_event - now_event;
        if lead < self.min_lead_events {
            return Err(Error::Late {
                execute_event,
                now_event,
                lead,
                min_lead: self.min_lead_events,
            });
        }
        Ok(())
    }
}

/// What a command does when its event arrives.
#[derive(Clone, Debug, PartialEq)]
pub enum CommandAction {
    /// One latched register write, already encoded.
    RegisterWrite { reg: u16, payload: Vec<u8> },
    /// Adopt a phase program: write phase, frequency and chirp words at the
    /// event, then keep refreshing the words every event after it.
    PhaseProgram {
        pf: PhaseFunction,
        chirp_enabled: bool,
    },
}

/// A time-tagged command bound for one device.
#[derive(Clone, Debug, PartialEq)]
pub struct TimedCommand {
    pub device: String,
    /// Property name or "phase_program", for reports and logs.
    pub label: String,
    pub execute_event: u64,
    pub window_slot: u8,
    pub action: CommandAction,
}

/// A command sitting in a station queue, with its message arrival instant
/// and intake order (the FIFO tie-break inside a window).
#[derive(Clone, Debug, PartialEq)]
pub struct QueuedCommand {
    pub cmd: TimedCommand,
    pub arrival: ArrayTime,
    pub order: u64,
}

/// Outcome counters of one period's dispatch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct DispatchStats {
    pub commands_dispatched: u64,
    /// Work that spilled past its window (still executed).
    pub window_overruns: u64,
    /// Commands that could not be applied at their tagged event.
    pub timing_violations: u64,
}

/// One period's dispatch outcome.
#[derive(Debug, Default)]
pub struct DispatchReport {
    pub transactions: Vec<BusTransaction>,
    pub stats: DispatchStats,
}

struct WorkItem {
    slot: u8,
    class: u8,
    order: u64,
    arrival: Option<ArrayTime>,
    node: u16,
    writes: Vec<(u16, Vec<u8>)>,
    arm: Option<(String, PhaseFunction, bool, u64)>,
}

fn phase_program_writes(words: fts::TrackingWords) -> Vec<(u16, Vec<u8>)> {
    let mut writes = Vec::new();
    if let Some(phase) = words.phase {
        writes.push((fts::REG_PHASE, phase.to_be_bytes().to_vec()));
    }
    let freq = (words.freq as u64 & 0xFFFF_FFFF_FFFF).to_be_bytes()[2..].to_vec();
    writes.push((fts::REG_FREQ, freq));
    writes.push((fts::REG_CHIRP, (words.chirp as i32).to_be_bytes().to_vec()));
    writes
}

/// Transmit everything that must latch at `upcoming`: due commands first,
/// then the per-event word refreshes of active phase programs. Traffic is
/// laid into each device's window; the period budget is a hard limit and
/// exceeding it aborts with `Overcommitted`.
pub fn abm_dispatch(
    station: &mut Station,
    upcoming: TimingEvent,
    window: &WindowPolicy,
    master: &MasterClock,
) -> Result<DispatchReport> {
    assert!(upcoming.seq >= 1, "the first period dispatches for event 1");
    let period_start = master.event_time(upcoming.seq - 1);
    let period_end = upcoming.tai;
    let mut report = DispatchReport::default();

    // Pull due commands out of the queue; anything stale missed its event.
    let mut due = Vec::new();
    for qc in std::mem::take(&mut station.queue) {
        if qc.cmd.execute_event == upcoming.seq {
            if qc.arrival < period_end {
                due.push(qc);
            } else {
                report.stats.timing_violations += 1;
            }
        } else if qc.cmd.execute_event < upcoming.seq {
            report.stats.timing_violations += 1;
        } else {
            station.queue.push(qc);
        }
    }
    due.sort_by_key(|qc| (qc.cmd.window_slot, qc.order));

    let mut items: Vec<WorkItem> = Vec::new();
    for qc in due {
        let entry = station.entry(&qc.cmd.device)?;
        let node = entry.spec.node;
        let (writes, arm) = match &qc.cmd.action {
            CommandAction::RegisterWrite { reg, payload } => {
                (vec![(*reg, payload.clone())], None)
            }
            CommandAction::PhaseProgram { pf, chirp_enabled } => {
                let mut ctl = fts::FtsController::new();
                ctl.arm(*pf, *chirp_enabled, upcoming.seq);
                let words = ctl
                    .tracking_words(upcoming.seq, master)?
                    .expect("armed program emits words at its event");
                (
                    phase_program_writes(words),
                    Some((qc.cmd.device.clone(), *pf, *chirp_enabled, upcoming.seq)),
                )
            }
        };
        items.push(WorkItem {
            slot: qc.cmd.window_slot,
            class: 0,
            order: qc.order,
            arrival: Some(qc.arrival),
            node,
            writes,
            arm,
        });
    }

    // Word refreshes for programs armed at an earlier event. Programs armed
    // by a command above already carry this event's words.
    for (order, entry) in station.devices.values().enumerate() {
        if entry.spec.kind != DeviceKind::Fts {
            continue;
        }
        let Some(ctl) = entry.servant.as_ref().and_then(|s| s.fts.as_ref()) else {
            continue;
        };
        let Some((_, _, from_event)) = ctl.active() else {
            continue;
        };
        if from_event >= upcoming.seq {
            continue;
        }
        let words = ctl
            .tracking_words(upcoming.seq, master)?
            .expect("active program emits words");
        items.push(WorkItem {
            slot: entry.spec.window_slot(),
            class: 1,
            order: order as u64,
            arrival: None,
            node: entry.spec.node,
            writes: phase_program_writes(words),
            arm: None,
        });
    }

    items.sort_by_key(|w| (w.slot, w.class, w.order));

    let mut cursor = period_start.max(station.bus.free_at());
    let mut arms = Vec::new();
    for item in items {
        let slot_start = period_start.plus_ns(u64::from(item.slot) * window.slot_width_ns);
        let slot_end = slot_start.plus_ns(window.slot_width_ns);
        let mut start = cursor.max(slot_start);
        if let Some(arrival) = item.arrival {
            start = start.max(arrival);
        }
        let mut item_end = start;
        for (reg, payload) in &item.writes {
            let dur = 2 * station.bus.model().frame_duration_ns(payload.len());
            if start.plus_ns(dur) > period_end {
                return Err(Error::Overcommitted(format!(
                    "command traffic on {} runs past the period ending at event {}",
                    station.name(),
                    upcoming.seq
                )));
            }
            let addr = NodeAddress::new(item.node, rca_write_latched(*reg))?;
            let txn = station.bus.poll(addr, payload, start)?;
            if txn.end > period_end {
                return Err(Error::Overcommitted(format!(
                    "timeout on {} pushed traffic past the period ending at event {}",
                    station.name(),
                    upcoming.seq
                )));
            }
            start = txn.end;
            item_end = txn.end;
            report.transactions.push(txn);
        }
        if item_end > slot_end {
            report.stats.window_overruns += 1;
        }
        cursor = item_end.max(cursor);
        if item.class == 0 {
            report.stats.commands_dispatched += 1;
        }
        if let Some((device, pf, chirp_enabled, from_event)) = item.arm {
            arms.push((device, pf, chirp_enabled, from_event));
        }
    }

    for (device, pf, chirp_enabled, from_event) in arms {
        let entry = station.entry_mut(&device)?;
        let ctl = entry
            .servant
            .as_mut()
            .and_then(|s| s.fts.as_mut())
            .ok_or_else(|| Error::Usage(format!("{device:?} has no synthesizer controller")))?;
        ctl.arm(pf, chirp_enabled, from_event);
    }

    Ok(report)
}

/// One period's monitor outcome.
#[derive(Debug, Default)]
pub struct MonitorReport {
    pub transactions_ns: u64,
    pub samples: u64,
}

/// Poll every monitor due at `closing` and stage the samples on the
/// station's collectors. Runs after command dispatch, in the same period;
/// sample timestamps are the event plus the poll's offset inside it.
pub fn schedule_monitors(
    station: &mut Station,
    closing: TimingEvent,
    master: &MasterClock,
) -> Result<MonitorReport> {
    let period_end = master.event_time(closing.seq + 1);
    let mut report = MonitorReport::default();

    let due: Vec<(String, String, String)> = station
        .monitors
        .iter()
        .filter(|m| {
            closing.seq > m.spec.start_event
                && (closing.seq - m.spec.start_event) % m.spec.period_events == 0
        })
        .map(|m| {
            (
                m.spec.device.clone(),
                m.spec.property.clone(),
                m.spec.channel.clone(),
            )
        })
        .collect();

    for (device, property, channel) in due {
        let at = closing.tai.max(station.bus.free_at());
        let (reading, wire_ns) = station.poll_property(&device, &property, at)?;
        if reading.timestamp > period_end {
            return Err(Error::Overcommitted(format!(
                "monitor traffic on {} runs past the period ending at event {}",
                station.name(),
                closing.seq + 1
            )));
        }
        let sample = Sample {
            device,
            property,
            value: reading.value,
            quality: reading.quality,
            event_seq: closing.seq,
            offset_ns: reading.timestamp.ns_since(closing.tai),
        };
        station.eval_alarms(&sample);
        station.collector_for(&channel).collect(sample);
        report.transactions_ns += wire_ns;
        report.samples += 1;
    }
    Ok(report)
}
