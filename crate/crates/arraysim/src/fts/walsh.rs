//! Walsh functions and the four-valued phase switching patterns built from
//! them.
//!
//! Walsh functions in natural (Hadamard) ordering over n = 2^m points:
//! `w_k[i] = (-1)^popcount(k & i)`. Distinct indices are exactly orthogonal
//! over a full period, which is what lets every antenna switch phase
//! simultaneously and still be demodulated independently.
//!
//! A pattern runs over 4096 slots of 250 us (1.024 s per period) and encodes
//! two nested two-state cycles: a fast one that toggles 180 degrees and a
//! slow one, the same Walsh function stretched 64x in time, that toggles
//! 90 degrees. Slot `s` therefore carries one of four phase offsets,
//! `quadrant(s) * 90 degrees`, with
//! `quadrant = 2 * fast_bit(s % 64) + slow_bit(s / 64)`.

use crate::error::{Error, Result};

/// Pattern slot width.
pub const SLOT_NS: u64 = 250_000;
/// Slots per pattern period.
pub const SLOTS_PER_PATTERN: usize = 4096;
/// Pattern period: 4096 * 250 us = 1.024 s.
pub const PATTERN_PERIOD_NS: u64 = SLOT_NS * SLOTS_PER_PATTERN as u64;
/// Length of the underlying Walsh functions; also the number of pattern
/// slots per fast cycle.
pub const WALSH_POINTS: usize = 64;
/// Usable pattern indices. Index 0 is the constant function and is reserved.
pub const MAX_WALSH_INDEX: u8 = 63;

/// Walsh function `k` over `n` points in natural ordering, as +1/-1 values.
///
/// `n` must be a power of two and `k < n`.
pub fn walsh(k: usize, n: usize) -> Result<Vec<i8>> {
    if !n.is_power_of_two() {
        return Err(Error::Domain(format!("walsh length {n} is not a power of two")));
    }
    if k >= n {
        return Err(Error::Domain(format!("walsh index {k} is not below {n}")));
    }
    Ok((0..n)
        .map(|i| if (k & i).count_ones() % 2 == 0 { 1 } else { -1 })
        .collect())
}

/// One antenna's switching schedule: the quadrant (0..=3, in units of a
/// quarter turn) applied during each 250 us slot of the 1.024 s period.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhaseSwitchPattern {
    walsh_index: u8,
    slots: Vec<u8>,
}

/// Build the pattern for Walsh index `k` (1..=63).
pub fn build_pattern(k: u8) -> Result<PhaseSwitchPattern> {
    if k == 0 || k > MAX_WALSH_INDEX {
        return Err(Error::Domain(format!(
            "pattern index {k} outside 1..={MAX_WALSH_INDEX}"
        )));
    }
    let w = walsh(k as usize, WALSH_POINTS)?;
    let bit = |v: i8| u8::from(v < 0);
    let slots = (0..SLOTS_PER_PATTERN)
        .map(|s| {
            let fast = bit(w[s % WALSH_POINTS]);
            let slow = bit(w[s / WALSH_POINTS]);
            2 * fast + slow
        })
        .collect();
    Ok(PhaseSwitchPattern { walsh_index: k, slots })
}

impl PhaseSwitchPattern {
    pub fn walsh_index(&self) -> u8 {
        self.walsh_index
    }

    /// Quadrant applied during slot `s` (wraps modulo the period).
    pub fn quadrant(&self, s: usize) -> u8 {
        self.slots[s % SLOTS_PER_PATTERN]
    }

    /// Phase offset of slot `s` in turns.
    pub fn phase_turns(&self, s: usize) -> f64 {
        f64::from(self.quadrant(s)) * 0.25
    }

    pub fn slots(&self) -> &[u8] {
        &self.slots
    }
}

/// Sum of `exp(i * (phase_a[s] - phase_b[s]))` over one full period, exact
/// on the Gaussian-integer lattice. Demodulating one antenna's switching
/// against another's: identical patterns correlate to 4096 + 0i, distinct
/// ones to exactly zero.
pub fn cross_demod(a: &PhaseSwitchPattern, b: &PhaseSwitchPattern) -> (i64, i64) {
    let mut re = 0i64;
    let mut im = 0i64;
    for s in 0..SLOTS_PER_PATTERN {
        let d = (4 + a.slots[s] - b.slots[s]) % 4;
        match d {
            0 => re += 1,
            1 => im += 1,
            2 => re -= 1,
            _ => im -= 1,
        }
    }
    (re, im)
}
