//! Fringe tracking synthesizer: the phase-critical device of the array.
//!
//! The hardware is a numerically controlled oscillator stepped 4000 times a
//! second (every 250 us, 192 steps per 48 ms event) plus a pattern generator
//! that adds the Walsh phase switching offset on top. Software refreshes the
//! step increments once per event, i.e. at 20 5/6 Hz; the chirp register
//! makes the increment itself ramp within the event so the hardware tracks a
//! quadratic phase between refreshes instead of a straight line.
//!
//! Everything the oscillator does is integer arithmetic on a 48-bit phase
//! accumulator in units of 2^-48 turn. The architectural 32-bit phase
//! register is the top 32 bits of that accumulator. Register writes arriving
//! over the bus are staged and latch at the next timing event, so a phase
//! program takes effect at an exact, named instant.

pub mod walsh;

use crate::error::{Error, Result};
use crate::framework::device::WriteRecord;
use crate::simbus::CanNode;
use crate::timebase::{ArrayTime, MasterClock, TimingEvent, EVENT_PERIOD_NS};
use walsh::{build_pattern, PhaseSwitchPattern, SLOT_NS};

/// Oscillator step width: 250 us.
pub const STEP_NS: u64 = SLOT_NS;
/// Steps per timing event: 48 ms / 250 us.
pub const STEPS_PER_EVENT: u64 = EVENT_PERIOD_NS / STEP_NS;
/// One oscillator step in seconds, for word computations.
pub const STEP_SECONDS: f64 = 250e-6;
/// Width of the internal phase accumulator.
pub const ACC_BITS: u32 = 48;
const ACC_MODULUS: i128 = 1 << ACC_BITS;
/// One accumulator count, in turns.
pub const ACC_UNIT_TURNS: f64 = 1.0 / (1u64 << ACC_BITS) as f64;

/// Register map. Phase-critical registers latch at the next timing event no
/// matter which write operation carried them.
pub const REG_PHASE: u16 = 0x01;
pub const REG_FREQ: u16 = 0x02;
pub const REG_CHIRP: u16 = 0x03;
pub const REG_PATTERN_INDEX: u16 = 0x04;
pub const REG_STATUS: u16 = 0x10;

pub const REG_PHASE_BYTES: usize = 4;
pub const REG_FREQ_BYTES: usize = 6;
pub const REG_CHIRP_BYTES: usize = 4;
pub const REG_PATTERN_INDEX_BYTES: usize = 1;
pub const REG_STATUS_BYTES: usize = 8;

/// Pattern changes activate only at event sequence numbers divisible by 64:
/// 64 events = 3.072 s = exactly three pattern periods, so those instants
/// are the common grid of the event clock and the 1.024 s pattern.
pub const PATTERN_EPOCH_EVENTS: u64 = 64;

fn wrap_acc(acc: u64, delta: i128) -> u64 {
    (i128::from(acc) + delta).rem_euclid(ACC_MODULUS) as u64
}

fn sign_extend(raw: u64, bytes: usize) -> i64 {
    let shift = 64 - 8 * bytes as u32;
    ((raw << shift) as i64) >> shift
}

fn read_be(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0u64, |acc, &b| (acc << 8) | u64::from(b))
}

fn write_be(value: u64, bytes: usize) -> Vec<u8> {
    (0..bytes)
        .map(|k| (value >> (8 * (bytes - 1 - k))) as u8)
        .collect()
}

/// Accumulator value after `k` steps from a snapshot, without committing.
fn acc_after_steps(acc: u64, freq: i64, chirp: i64, k: u64) -> u64 {
    let k = k as i128;
    let delta = k * i128::from(freq) + i128::from(chirp) * k * (k - 1) / 2;
    wrap_acc(acc, delta)
}

/// The synthesizer hardware: one bus node.
pub struct FtsHw {
    acc: u64,
    freq: i64,
    chirp: i64,
    pattern_index: u8,
    pattern: Option<ActivePattern>,
    pending_pattern: Option<u8>,
    staged: Vec<(u16, Vec<u8>)>,
    interval: Option<(u64, ArrayTime)>,
    journal: Vec<WriteRecord>,
}

struct ActivePattern {
    pattern: PhaseSwitchPattern,
    epoch_tai: ArrayTime,
}

/// Probe view of the hardware state, for tests and instruments.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FtsSnapshot {
    pub acc: u64,
    pub freq: i64,
    pub chirp: i64,
    pub pattern_index: u8,
    pub interval_event: u64,
    pub interval_tai: ArrayTime,
}

impl FtsHw {
    /// Fresh hardware with `walsh_index` queued so the pattern activates at
    /// the first epoch-aligned pulse it sees.
    pub fn new(walsh_index: u8) -> Self {
        FtsHw {
            acc: 0,
            freq: 0,
            chirp: 0,
            pattern_index: walsh_index,
            pattern: None,
            pending_pattern: Some(walsh_index),
            staged: Vec::new(),
            interval: None,
            journal: Vec::new(),
        }
    }

    pub fn snapshot(&self) -> Option<FtsSnapshot> {
        self.interval.map(|(seq, tai)| FtsSnapshot {
            acc: self.acc,
            freq: self.freq,
            chirp: self.chirp,
            pattern_index: self.pattern_index,
            interval_event: seq,
            interval_tai: tai,
        })
    }

    pub fn journal(&self) -> &[WriteRecord] {
        &self.journal
    }

    pub fn pattern(&self) -> Option<&PhaseSwitchPattern> {
        self.pattern.as_ref().map(|p| &p.pattern)
    }

    /// Tracking phase alone, in turns: the full 48-bit accumulator stepped
    /// forward to `t`, no switching offset. `t` must lie within the current
    /// or immediately following interval.
    pub fn tracking_phase(&self, t: ArrayTime) -> Result<f64> {
        let (_, start) = self.interval.ok_or_else(|| {
            Error::Usage("phase sampled before the first timing event".into())
        })?;
        if t < start {
            return Err(Error::Domain(format!(
                "sample instant {t} is before the current interval start {start}"
            )));
        }
        let k = t.ns_since(start) / STEP_NS;
        debug_assert!(k <= STEPS_PER_EVENT, "sample beyond refresh horizon");
        let acc = acc_after_steps(self.acc, self.freq, self.chirp, k);
        Ok(acc as f64 / ACC_MODULUS as f64)
    }

    /// Total phase (tracking plus switching offset) in turns at instant `t`.
    pub fn sample_phase(&self, t: ArrayTime) -> Result<f64> {
        let tracking = self.tracking_phase(t)?;
        let offset = match &self.pattern {
            Some(p) => {
                let slot = (t.ns_since(p.epoch_tai) / SLOT_NS) as usize;
                p.pattern.phase_turns(slot)
            }
            None => 0.0,
        };
        Ok((tracking + offset).rem_euclid(1.0))
    }

    /// Quadrant the pattern generator applies at instant `t`.
    pub fn quadrant_at(&self, t: ArrayTime) -> u8 {
        match &self.pattern {
            Some(p) if t >= p.epoch_tai => {
                let slot = (t.ns_since(p.epoch_tai) / SLOT_NS) as usize;
                p.pattern.quadrant(slot)
            }
            _ => 0,
        }
    }

    fn apply_write(&mut self, reg: u16, bytes: &[u8], at: ArrayTime, latch_event: u64) {
        match reg {
            REG_PHASE => self.acc = read_be(bytes) << 16,
            REG_FREQ => self.freq = sign_extend(read_be(bytes), REG_FREQ_BYTES),
            REG_CHIRP => self.chirp = sign_extend(read_be(bytes), REG_CHIRP_BYTES),
            REG_PATTERN_INDEX => {
                self.pattern_index = bytes[0];
                self.pending_pattern = Some(bytes[0]);
            }
            _ => unreachable!("staged write to unknown register"),
        }
        self.journal.push(WriteRecord {
            reg,
            payload: bytes.to_vec(),
            at,
            latch_event: Some(latch_event),
        });
    }

    fn writable_width(reg: u16) -> Option<usize> {
        match reg {
            REG_PHASE => Some(REG_PHASE_BYTES),
            REG_FREQ => Some(REG_FREQ_BYTES),
            REG_CHIRP => Some(REG_CHIRP_BYTES),
            REG_PATTERN_INDEX => Some(REG_PATTERN_INDEX_BYTES),
            _ => None,
        }
    }
}

impl CanNode for FtsHw {
    fn poll(&mut self, rca: u32, request: &[u8], at: ArrayTime) -> Option<Vec<u8>> {
        use crate::framework::codec::{RCA_REGISTER_MASK, RCA_WRITE_LATCHED, RCA_WRITE_NOW};
        let reg = (rca & RCA_REGISTER_MASK) as u16;
        let write = rca & (RCA_WRITE_LATCHED | RCA_WRITE_NOW) != 0;

        if write {
            // Phase-critical hardware has no safe "now": every write latches
            // at the next timing event.
            let width = Self::writable_width(reg)?;
            if request.len() != width {
                return None;
            }
            self.staged.push((reg, request.to_vec()));
            return Some(request.to_vec());
        }

        match reg {
            REG_PHASE if request.len() == REG_PHASE_BYTES => {
                let (_, start) = self.interval?;
                let k = at.ns_since(start) / STEP_NS;
                let acc = acc_after_steps(self.acc, self.freq, self.chirp, k);
                Some(write_be(acc >> 16, REG_PHASE_BYTES))
            }
            REG_FREQ if request.len() == REG_FREQ_BYTES => {
                Some(write_be(self.freq as u64 & 0xFFFF_FFFF_FFFF, REG_FREQ_BYTES))
            }
            REG_CHIRP if request.len() == REG_CHIRP_BYTES => {
                Some(write_be(self.chirp as u64 & 0xFFFF_FFFF, REG_CHIRP_BYTES))
            }
            REG_PATTERN_INDEX if request.len() == REG_PATTERN_INDEX_BYTES => {
                Some(vec![self.pattern_index])
            }
            REG_STATUS if request.len() == REG_STATUS_BYTES => {
                let (seq, start) = self.interval?;
                let k = at.ns_since(start) / STEP_NS;
                let acc = acc_after_steps(self.acc, self.freq, self.chirp, k);
                let mut out = vec![0u8; 2];
                out.extend_from_slice(&write_be(seq & 0xFFFF, 2));
                out.push(self.pattern_index);
                out.push(self.quadrant_at(at));
                out.extend_from_slice(&write_be(acc >> 32, 2));
                Some(out)
            }
            _ => None,
        }
    }

    fn on_pulse(&mut self, event: TimingEvent) {
        // Close out the interval that just elapsed: 192 steps under the
        // words that were live during it.
        if self.interval.is_some() {
            self.acc = acc_after_steps(self.acc, self.freq, self.chirp, STEPS_PER_EVENT);
        }
        self.interval = Some((event.seq, event.tai));
        let staged = std::mem::take(&mut self.staged);
        for (reg, bytes) in staged {
            self.apply_write(reg, &bytes, event.tai, event.seq);
        }
        if event.seq % PATTERN_EPOCH_EVENTS == 0 {
            if let Some(idx) = self.pending_pattern.take() {
                if let Ok(pattern) = build_pattern(idx) {
                    self.pattern = Some(ActivePattern {
                        pattern,
                        epoch_tai: event.tai,
                    });
                }
            }
        }
    }
}

/// The phase program an antenna tracks: `phi(t) = phi0 + rate * dt +
/// accel * dt^2 / 2`, `dt` measured from the event `epoch_event`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseFunction {
    pub phi0_turns: f64,
    pub rate_turns_per_s: f64,
    pub accel_turns_per_s2: f64,
    pub epoch_event: u64,
}

impl PhaseFunction {
    /// Exact model value at `dt` seconds past the epoch event.
    pub fn phase_at(&self, dt_s: f64) -> f64 {
        self.phi0_turns + self.rate_turns_per_s * dt_s + 0.5 * self.accel_turns_per_s2 * dt_s * dt_s
    }

    /// Instantaneous rate at `dt` seconds past the epoch event.
    pub fn rate_at(&self, dt_s: f64) -> f64 {
        self.rate_turns_per_s + self.accel_turns_per_s2 * dt_s
    }
}

/// Quantize a turns value to the 32-bit phase register.
pub fn quantize_phase_turns(phi: f64) -> u32 {
    let scaled = (phi.rem_euclid(1.0) * 4294967296.0).round() as u64;
    (scaled % 4294967296) as u32
}

fn quantize_step_word(turns_per_step: f64, bound_bits: u32, what: &str) -> Result<i64> {
    let word = (turns_per_step * ACC_MODULUS as f64).round();
    let bound = 2f64.powi(bound_bits as i32 - 1);
    if !word.is_finite() || word < -bound || word >= bound {
        return Err(Error::Range(format!(
            "{what} word {word} does not fit {bound_bits} bits"
        )));
    }
    Ok(word as i64)
}

/// Frequency word for an interval: phase advance per 250 us step, at the
/// interval's start rate `v`, plus half a chirp step when chirp is on (the
/// trapezoid correction that makes the stepped sum match the quadratic).
pub fn freq_word(v_turns_per_s: f64, accel_turns_per_s2: f64, chirp_enabled: bool) -> Result<i64> {
    let h = STEP_SECONDS;
    let correction = if chirp_enabled {
        0.5 * accel_turns_per_s2 * h * h
    } else {
        0.0
    };
    quantize_step_word(v_turns_per_s * h + correction, ACC_BITS, "frequency")
}

/// Chirp word: the per-step ramp of the frequency word, `accel * h^2`.
pub fn chirp_word(accel_turns_per_s2: f64) -> Result<i64> {
    // The register is 4 bytes, so the word must fit 32 bits.
    quantize_step_word(accel_turns_per_s2 * STEP_SECONDS * STEP_SECONDS, 32, "chirp")
}

/// Words the controller stages during the period before `event` so the
/// hardware latches them exactly at `event`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrackingWords {
    /// Set only when the program begins at this event.
    pub phase: Option<u32>,
    pub freq: i64,
    pub chirp: i64,
}

/// Per-device software side of the synthesizer: holds the active phase
/// program and converts it to register words, one refresh per event.
#[derive(Default)]
pub struct FtsController {
    armed: Option<ArmedProgram>,
}

struct ArmedProgram {
    pf: PhaseFunction,
    chirp_enabled: bool,
    from_event: u64,
}

impl FtsController {
    pub fn new() -> Self {
        FtsController { armed: None }
    }

    /// Adopt a phase program that takes effect at `from_event`.
    pub fn arm(&mut self, pf: PhaseFunction, chirp_enabled: bool, from_event: u64) {
        self.armed = Some(ArmedProgram {
            pf,
            chirp_enabled,
            from_event,
        });
    }

    pub fn active(&self) -> Option<(&PhaseFunction, bool, u64)> {
        self.armed
            .as_ref()
            .map(|a| (&a.pf, a.chirp_enabled, a.from_event))
    }

    /// Register words to latch at `event`, or `None` when no program is due.
    pub fn tracking_words(&self, event: u64, master: &MasterClock) -> Result<Option<TrackingWords>> {
        let Some(armed) = &self.armed else {
            return Ok(None);
        };
        if event < armed.from_event {
            return Ok(None);
        }
        let t_event = master.event_time(event).as_ns() as i128;
        let t_epoch = master.event_time(armed.pf.epoch_event).as_ns() as i128;
        let dt_s = (t_event - t_epoch) as f64 * 1e-9;
        let v = armed.pf.rate_at(dt_s);
        let freq = freq_word(v, armed.pf.accel_turns_per_s2, armed.chirp_enabled)?;
        let chirp = if armed.chirp_enabled {
            chirp_word(armed.pf.accel_turns_per_s2)?
        } else {
            0
        };
        let phase = (event == armed.from_event)
            .then(|| quantize_phase_turns(armed.pf.phase_at(dt_s)));
        Ok(Some(TrackingWords { phase, freq, chirp }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::framework::codec::{rca_read, rca_write_latched, rca_write_now};

    fn pulse(hw: &mut FtsHw, master: &MasterClock, seq: u64) {
        hw.on_pulse(master.event(seq));
    }

    #[test]
    fn writes_latch_only_at_the_pulse() {
        let master = MasterClock::default();
        let mut hw = FtsHw::new(1);
        pulse(&mut hw, &master, 0);

        let freq_bytes = write_be(1000, REG_FREQ_BYTES);
        let echo = hw
            .poll(rca_write_latched(REG_FREQ), &freq_bytes, ArrayTime::from_ns(1_000_000))
            .unwrap();
        assert_eq!(echo, freq_bytes);
        assert_eq!(hw.snapshot().unwrap().freq, 0);

        pulse(&mut hw, &master, 1);
        assert_eq!(hw.snapshot().unwrap().freq, 1000);
        let rec = hw.journal().last().unwrap();
        assert_eq!(rec.latch_event, Some(1));
    }

    #[test]
    fn immediate_writes_also_latch_on_this_hardware() {
        let master = MasterClock::default();
        let mut hw = FtsHw::new(1);
        pulse(&mut hw, &master, 0);
        hw.poll(rca_write_now(REG_FREQ), &write_be(7, REG_FREQ_BYTES), ArrayTime::from_ns(500))
            .unwrap();
        assert_eq!(hw.snapshot().unwrap().freq, 0);
        pulse(&mut hw, &master, 1);
        assert_eq!(hw.snapshot().unwrap().freq, 7);
    }

    #[test]
    fn nco_advances_the_closed_form_step_sum() {
        let master = MasterClock::default();
        let mut hw = FtsHw::new(1);
        pulse(&mut hw, &master, 0);
        hw.poll(rca_write_latched(REG_FREQ), &write_be(1 << 20, REG_FREQ_BYTES), ArrayTime::from_ns(1))
            .unwrap();
        hw.poll(rca_write_latched(REG_CHIRP), &write_be(3, REG_CHIRP_BYTES), ArrayTime::from_ns(70_000))
            .unwrap();
        pulse(&mut hw, &master, 1);
        assert_eq!(hw.snapshot().unwrap().acc, 0);

        pulse(&mut hw, &master, 2);
        let expected = 192u64 * (1 << 20) + 3 * (192 * 191 / 2);
        assert_eq!(hw.snapshot().unwrap().acc, expected);
    }

    #[test]
    fn phase_write_sets_the_top_bits() {
        let master = MasterClock::default();
        let mut hw = FtsHw::new(1);
        pulse(&mut hw, &master, 0);
        hw.poll(rca_write_latched(REG_PHASE), &write_be(0x8000_0000, 4), ArrayTime::from_ns(1))
            .unwrap();
        pulse(&mut hw, &master, 1);
        assert_eq!(hw.snapshot().unwrap().acc, 0x8000_0000u64 << 16);
        let t = master.event_time(1);
        // Event 1 falls in pattern slot 192, where Walsh 1 has the slow
        // 90-degree bit set: the switching offset adds a quarter turn.
        assert_eq!(hw.sample_phase(t).unwrap(), 0.75);
    }

    #[test]
    fn negative_frequency_word_round_trips() {
        let master = MasterClock::default();
        let mut hw = FtsHw::new(1);
        pulse(&mut hw, &master, 0);
        let word = -(1i64 << 30);
        hw.poll(
            rca_write_latched(REG_FREQ),
            &write_be(word as u64 & 0xFFFF_FFFF_FFFF, REG_FREQ_BYTES),
            ArrayTime::from_ns(1),
        )
        .unwrap();
        pulse(&mut hw, &master, 1);
        assert_eq!(hw.snapshot().unwrap().freq, word);
        let read = hw
            .poll(rca_read(REG_FREQ), &[0; REG_FREQ_BYTES], master.event_time(1))
            .unwrap();
        assert_eq!(sign_extend(read_be(&read), REG_FREQ_BYTES), word);
    }

    #[test]
    fn pattern_changes_wait_for_the_epoch_grid() {
        let master = MasterClock::default();
        let mut hw = FtsHw::new(2);
        pulse(&mut hw, &master, 0);
        assert_eq!(hw.pattern().unwrap().walsh_index(), 2);

        hw.poll(rca_write_latched(REG_PATTERN_INDEX), &[9], ArrayTime::from_ns(1))
            .unwrap();
        pulse(&mut hw, &master, 1);
        // Register shows the new index immediately after the latch ...
        let read = hw
            .poll(rca_read(REG_PATTERN_INDEX), &[0], master.event_time(1))
            .unwrap();
        assert_eq!(read, vec![9]);
        // ... but the active pattern holds until the next epoch boundary.
        assert_eq!(hw.pattern().unwrap().walsh_index(), 2);
        for seq in 2..=63 {
            pulse(&mut hw, &master, seq);
            assert_eq!(hw.pattern().unwrap().walsh_index(), 2);
        }
        pulse(&mut hw, &master, 64);
        assert_eq!(hw.pattern().unwrap().walsh_index(), 9);
    }

    #[test]
    fn status_read_packs_live_state() {
        let master = MasterClock::default();
        let mut hw = FtsHw::new(5);
        pulse(&mut hw, &master, 0);
        pulse(&mut hw, &master, 1);
        let t = master.event_time(1).plus_ns(3 * STEP_NS);
        let status = hw.poll(rca_read(REG_STATUS), &[0; 8], t).unwrap();
        assert_eq!(status[0], 0);
        assert_eq!(status[1], 0);
        assert_eq!(read_be(&status[2..4]), 1);
        assert_eq!(status[4], 5);
        assert_eq!(status[5], hw.quadrant_at(t));
        assert!(read_be(&status) < 1 << 48);
    }

    #[test]
    fn word_quantization() {
        // accel = 1 turn/s^2: chirp word is round(2^48 / 16e6).
        assert_eq!(chirp_word(1.0).unwrap(), 17_592_186);
        assert_eq!(chirp_word(-1.0).unwrap(), -17_592_186);
        assert!(chirp_word(1e6).is_err());

        // 100 turns/s at 250 us per step is 0.025 turn per step.
        let w = freq_word(100.0, 0.0, false).unwrap();
        assert_eq!(w, (0.025f64 * ACC_MODULUS as f64).round() as i64);
        // The quantization error of any word is at most half a count.
        assert!(freq_word(2100.0, 0.0, false).is_err());
    }

    #[test]
    fn controller_emits_phase_only_at_activation() {
        let master = MasterClock::default();
        let mut ctl = FtsController::new();
        let pf = PhaseFunction {
            phi0_turns: 0.25,
            rate_turns_per_s: 1.5,
            accel_turns_per_s2: 1.0,
            epoch_event: 10,
        };
        ctl.arm(pf, true, 10);
        assert!(ctl.tracking_words(9, &master).unwrap().is_none());

        let at_start = ctl.tracking_words(10, &master).unwrap().unwrap();
        assert_eq!(at_start.phase, Some(quantize_phase_turns(0.25)));
        assert_eq!(at_start.chirp, 17_592_186);

        let later = ctl.tracking_words(11, &master).unwrap().unwrap();
        assert_eq!(later.phase, None);
        // Rate grew by accel * 48 ms between events.
        let v = 1.5 + 1.0 * 0.048;
        assert_eq!(later.freq, freq_word(v, 1.0, true).unwrap());
    }

    #[test]
    fn sample_phase_includes_the_switching_offset() {
        let master = MasterClock::default();
        let mut hw = FtsHw::new(1);
        pulse(&mut hw, &master, 0);
        // Walsh 1 fast bit toggles every slot: slot 1 adds half a turn.
        let t0 = master.event_time(0);
        assert_eq!(hw.sample_phase(t0).unwrap(), 0.0);
        assert_eq!(hw.sample_phase(t0.plus_ns(STEP_NS)).unwrap(), 0.5);
        assert!(hw.sample_phase(t0).unwrap() >= 0.0);
    }
}
