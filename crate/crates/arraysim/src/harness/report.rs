//! End-of-run accounting.

use std::collections::BTreeMap;

use serde::Serialize;

use super::sim::SimCounters;

/// Everything a finished run reports. Serialized to `report.json` next to
/// the archive. `wall_clock_ms` is the one field that varies between
/// identical runs; the archive itself is byte-reproducible.
#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub events: u64,
    pub duration_s: f64,
    pub seed: u64,
    pub stations: Vec<String>,
    #[serde(flatten)]
    pub counters: SimCounters,
    pub samples_collected: u64,
    pub archived_records: u64,
    pub alarms_raised: u64,
    pub alarms_cleared: u64,
    /// Worst single-period bus occupancy seen, per station, in ns.
    pub max_period_wire_ns: BTreeMap<String, u64>,
    pub wall_clock_ms: u64,
}

impl RunReport {
    /// A clean run applied every accepted command at its tagged event.
    pub fn clean(&self) -> bool {
        self.counters.timing_violations == 0
    }

    /// One-line summary for terminals and logs.
    pub fn summary(&self) -> String {
        format!(
            "{} events, {}/{} commands dispatched ({} late, {} past), \
             {} samples archived, {} alarms, {} violations",
            self.events,
            self.counters.commands_dispatched,
            self.counters.commands_submitted,
            self.counters.commands_rejected_late,
            self.counters.commands_rejected_past,
            self.archived_records,
            self.alarms_raised + self.alarms_cleared,
            self.counters.timing_violations,
        )
    }
}
