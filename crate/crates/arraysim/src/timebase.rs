//! Array time and the pervasive timing event.
//!
//! The array keeps TAI as integer nanoseconds; there is no floating-point
//! time anywhere in the system. A master clock defines a pulse every 48 ms
//! (the timing event), and every other computer runs a slave clock that is
//! told the array time of one pulse and keeps time from then on purely by
//! counting pulses. Counting is what makes slave time immune to delivery
//! jitter: the k-th pulse after synchronization means
//! `synced_tai + k * period` regardless of when it physically lands.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};

/// Period of the pervasive timing event, in nanoseconds.
pub const EVENT_PERIOD_NS: u64 = 48_000_000;

/// Characteristic time scales of the control system, in nanoseconds.
pub mod scales {
    /// Shortest interval at which any device needs software interaction.
    pub const MIN_DEVICE_INTERACTION_NS: u64 = 2_000_000;
    /// Fastest back-end integration dump.
    pub const FAST_DUMP_NS: u64 = 16_000_000;
    /// Period of the timing event distributed to all precise hardware.
    pub const TIMING_EVENT_PERIOD_NS: u64 = super::EVENT_PERIOD_NS;
    /// Fastest cadence at which the observation itself changes.
    pub const OBSERVATION_CHANGE_NS: u64 = 1_000_000_000;
    /// Typical slow monitoring cadence.
    pub const SLOW_MONITOR_NS: u64 = 300_000_000_000;
}

/// An instant on the array's TAI timeline, in integer nanoseconds since the
/// simulation epoch.
#[derive(
    Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct ArrayTime(u64);

impl ArrayTime {
    pub const ZERO: ArrayTime = ArrayTime(0);

    pub const fn from_ns(ns: u64) -> Self {
        ArrayTime(ns)
    }

    pub const fn as_ns(self) -> u64 {
        self.0
    }

    /// Seconds as a float. Display and reporting only; never used in time
    /// arithmetic.
    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 * 1e-9
    }

    pub const fn plus_ns(self, ns: u64) -> Self {
        ArrayTime(self.0 + ns)
    }

    /// Nanoseconds elapsed since `earlier`.
    ///
    /// Panics if `earlier` is after `self`; callers only measure forward.
    pub fn ns_since(self, earlier: ArrayTime) -> u64 {
        self.0
            .checked_sub(earlier.0)
            .expect("ns_since called with a later instant")
    }
}

impl fmt::Debug for ArrayTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ns", self.0)
    }
}

impl fmt::Display for ArrayTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ns", self.0)
    }
}

/// One pulse of the 48 ms grid: its sequence number and its TAI instant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimingEvent {
    pub seq: u64,
    pub tai: ArrayTime,
}

/// The authoritative clock. It owns the epoch and the grid; everything else
/// in the simulation asks it where events fall.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MasterClock {
    epoch: ArrayTime,
    period_ns: u64,
}

impl Default for MasterClock {
    fn default() -> Self {
        MasterClock::new(ArrayTime::ZERO)
    }
}

impl MasterClock {
    pub fn new(epoch: ArrayTime) -> Self {
        MasterClock {
            epoch,
            period_ns: EVENT_PERIOD_NS,
        }
    }

    pub const fn epoch(&self) -> ArrayTime {
        self.epoch
    }

    pub const fn period_ns(&self) -> u64 {
        self.period_ns
    }

    /// TAI instant of event `seq`.
    pub fn event_time(&self, seq: u64) -> ArrayTime {
        self.epoch.plus_ns(seq * self.period_ns)
    }

    pub fn event(&self, seq: u64) -> TimingEvent {
        TimingEvent {
            seq,
            tai: self.event_time(seq),
        }
    }

    /// Sequence number of the first event at or after `t`.
    pub fn event_at_or_after(&self, t: ArrayTime) -> Result<u64> {
        if t < self.epoch {
            return Err(Error::Domain(format!(
                "instant {t} is before the timing epoch {}",
                self.epoch
            )));
        }
        let d = t.ns_since(self.epoch);
        Ok(d.div_ceil(self.period_ns))
    }

    /// Endless gapless stream of events starting at `start`.
    pub fn events_from(&self, start: u64) -> impl Iterator<Item = TimingEvent> + '_ {
        (start..).map(move |seq| self.event(seq))
    }
}

/// A pulse-counting clock replica. After one synchronization it reconstructs
/// array time exactly, because it counts events instead of timestamping
/// their arrival.
#[derive(Clone, Copy, Debug, Default)]
pub struct SlaveClock {
    sync: Option<SyncPoint>,
}

#[derive(Clone, Copy, Debug)]
struct SyncPoint {
    seq: u64,
    tai: ArrayTime,
    pulses_since: u64,
}

impl SlaveClock {
    pub fn new() -> Self {
        SlaveClock { sync: None }
    }

    pub fn is_synchronized(&self) -> bool {
        self.sync.is_some()
    }

    /// Accept the array time of the pulse being delivered right now.
    /// Re-synchronizing later is allowed and resets the count.
    pub fn sync(&mut self, seq: u64, tai: ArrayTime) {
        self.sync = Some(SyncPoint {
            seq,
            tai,
            pulses_since: 0,
        });
    }

    /// Count one pulse. Delivery jitter is irrelevant by design: only the
    /// count enters the time calculation.
    pub fn on_pulse(&mut self) -> Result<()> {
        match &mut self.sync {
            Some(p) => {
                p.pulses_since += 1;
                Ok(())
            }
            None => Err(Error::NotSynchronized),
        }
    }

    /// Array time of the most recent pulse.
    pub fn now(&self) -> Result<ArrayTime> {
        let p = self.sync.ok_or(Error::NotSynchronized)?;
        Ok(p.tai.plus_ns(p.pulses_since * EVENT_PERIOD_NS))
    }

    /// Sequence number of the most recent pulse.
    pub fn seq_now(&self) -> Result<u64> {
        let p = self.sync.ok_or(Error::NotSynchronized)?;
        Ok(p.seq + p.pulses_since)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn event_times_on_the_grid() {
        let m = MasterClock::default();
        assert_eq!(m.event_time(0), ArrayTime::ZERO);
        assert_eq!(m.event_time(1).as_ns(), 48_000_000);
        assert_eq!(m.event_time(1000).as_ns(), 48_000_000_000);
    }

    #[test]
    fn event_at_or_after_rounds_up() {
        let m = MasterClock::default();
        assert_eq!(m.event_at_or_after(ArrayTime::ZERO).unwrap(), 0);
        assert_eq!(m.event_at_or_after(ArrayTime::from_ns(1)).unwrap(), 1);
        assert_eq!(
            m.event_at_or_after(ArrayTime::from_ns(48_000_000)).unwrap(),
            1
        );
        // 100 ms falls between events 2 (96 ms) and 3 (144 ms).
        assert_eq!(
            m.event_at_or_after(ArrayTime::from_ns(100_000_000)).unwrap(),
            3
        );
    }

    #[test]
    fn before_epoch_is_a_domain_error() {
        let m = MasterClock::new(ArrayTime::from_ns(1_000_000));
        let err = m.event_at_or_after(ArrayTime::ZERO).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn slave_reconstructs_time_by_counting() {
        let m = MasterClock::default();
        let mut s = SlaveClock::new();
        assert!(matches!(s.now(), Err(Error::NotSynchronized)));

        s.sync(5, m.event_time(5));
        assert_eq!(s.now().unwrap(), m.event_time(5));
        for k in 6..=100 {
            s.on_pulse().unwrap();
            assert_eq!(s.now().unwrap(), m.event_time(k));
            assert_eq!(s.seq_now().unwrap(), k);
        }
    }

    #[test]
    fn pulse_before_sync_is_an_error() {
        let mut s = SlaveClock::new();
        assert!(matches!(s.on_pulse(), Err(Error::NotSynchronized)));
    }

    #[test]
    fn event_stream_is_gapless_and_increasing() {
        let m = MasterClock::default();
        let mut prev: Option<TimingEvent> = None;
        for ev in m.events_from(17).take(500) {
            if let Some(p) = prev {
                assert_eq!(ev.seq, p.seq + 1);
                assert_eq!(ev.tai.ns_since(p.tai), EVENT_PERIOD_NS);
            }
            prev = Some(ev);
        }
    }

    proptest! {
        #[test]
        fn event_at_or_after_inverts_event_time(seq in 0u64..1_000_000_000) {
            let m = MasterClock::default();
            let t = m.event_time(seq);
            prop_assert_eq!(m.event_at_or_after(t).unwrap(), seq);
        }

        #[test]
        fn event_at_or_after_is_the_ceiling(ns in 0u64..10_000_000_000_000) {
            let m = MasterClock::default();
            let seq = m.event_at_or_after(ArrayTime::from_ns(ns)).unwrap();
            let t = m.event_time(seq);
            prop_assert!(t.as_ns() >= ns);
            if seq > 0 {
                prop_assert!(m.event_time(seq - 1).as_ns() < ns);
            }
        }

        /// Jitter on pulse delivery must not move slave time at all. The
        /// jitter stream here is thrown away on purpose: nothing about the
        /// delivery instant enters the computation.
        #[test]
        fn slave_time_is_jitter_immune(
            jitters in proptest::collection::vec(0u64..24_000_000, 1..200),
            start in 0u64..10_000,
        ) {
            let m = MasterClock::default();
            let mut s = SlaveClock::new();
            s.sync(start, m.event_time(start));
            for (k, _jitter_ns) in jitters.iter().enumerate() {
                s.on_pulse().unwrap();
                prop_assert_eq!(s.now().unwrap(), m.event_time(start + k as u64 + 1));
            }
        }
    }
}
