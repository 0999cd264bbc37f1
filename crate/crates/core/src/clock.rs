//! Modular clocks and the slot/frame arithmetic built on top of them.
//!
//! Every timestamp in the system lives in `[0, c)` for a clock modulus `c`
//! shared by all nodes. Time is divided into timeslots of `xi` ticks and
//! `tau` consecutive timeslots form a frame. The modulus is always chosen as
//! a multiple of `xi * tau`, so slot and frame boundaries do not move when a
//! clock wraps around.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Multiplier used for the default clock modulus, `xi * tau^2 * 1024`.
pub const DEFAULT_MODULUS_FACTOR: u64 = 1024;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ClockError {
    #[error("slot length xi must be at least 1")]
    ZeroSlotLength,
    #[error("frame length tau must be at least 1")]
    ZeroFrameLength,
    #[error("clock modulus {modulus} is not a positive multiple of xi*tau = {frame_ticks}")]
    MisalignedModulus { modulus: u64, frame_ticks: u64 },
}

/// A clock value reduced modulo the clock modulus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModularClock {
    value: u64,
    modulus: u64,
}

impl ModularClock {
    pub fn new(value: u64, modulus: u64) -> Self {
        assert!(modulus > 0, "clock modulus must be positive");
        Self {
            value: value % modulus,
            modulus,
        }
    }

    pub fn value(&self) -> u64 {
        self.value
    }

    pub fn modulus(&self) -> u64 {
        self.modulus
    }

    /// `C <- (C + x) mod c`.
    #[must_use]
    pub fn advance(self, ticks: u64) -> Self {
        advance(self, ticks)
    }
}

/// Adds `ticks` to the clock, wrapping at the modulus. `ticks` is reduced
/// modulo `c` first, so any value is accepted.
pub fn advance(clock: ModularClock, ticks: u64) -> ModularClock {
    let m = clock.modulus;
    ModularClock {
        value: ((clock.value as u128 + (ticks % m) as u128) % m as u128) as u64,
        modulus: m,
    }
}

/// Timeslot length `xi` (ticks) and frame length `tau` (timeslots).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SlotParams {
    pub xi: u64,
    pub tau: u64,
}

impl SlotParams {
    pub fn new(xi: u64, tau: u64) -> Result<Self, ClockError> {
        if xi == 0 {
            return Err(ClockError::ZeroSlotLength);
        }
        if tau == 0 {
            return Err(ClockError::ZeroFrameLength);
        }
        Ok(Self { xi, tau })
    }

    /// Ticks per frame, `xi * tau`.
    pub fn frame_ticks(&self) -> u64 {
        self.xi * self.tau
    }

    pub fn default_modulus(&self) -> u64 {
        self.xi * self.tau * self.tau * DEFAULT_MODULUS_FACTOR
    }

    /// Checks that `modulus` keeps slot and frame boundaries stable across wrap.
    pub fn check_modulus(&self, modulus: u64) -> Result<(), ClockError> {
        let frame_ticks = self.frame_ticks();
        if modulus == 0 || !modulus.is_multiple_of(frame_ticks) {
            return Err(ClockError::MisalignedModulus {
                modulus,
                frame_ticks,
            });
        }
        Ok(())
    }

    pub fn slot_of(&self, t: u64) -> u64 {
        slot_of(t, self)
    }

    pub fn frame_of(&self, t: u64) -> u64 {
        frame_of(t, self)
    }

    pub fn is_boundary(&self, t: u64) -> bool {
        t.is_multiple_of(self.xi)
    }
}

/// Slot number of timestamp `t`: `(t / xi) mod tau`.
pub fn slot_of(t: u64, p: &SlotParams) -> u64 {
    (t / p.xi) % p.tau
}

/// Frame number of timestamp `t`: `(t / (xi*tau)) mod tau`.
pub fn frame_of(t: u64, p: &SlotParams) -> u64 {
    (t / p.frame_ticks()) % p.tau
}

/// Age of timestamp `ts` as seen at `now`, i.e. `(now - ts) mod c`.
pub fn age(ts: u64, now: u64, modulus: u64) -> u64 {
    (now % modulus + modulus - ts % modulus) % modulus
}

/// True iff `ts` is at most `timeout` ticks old at `now`.
pub fn age_within(ts: u64, now: u64, timeout: u64, modulus: u64) -> bool {
    age(ts, now, modulus) <= timeout
}

/// Windowed "remote is ahead of local" order: `0 < (remote - local) mod c < c/2`.
///
/// This is the converge-to-the-max comparison. A plain `<` would make a
/// clock that just wrapped to a small value look older than one about to
/// wrap; the half-range window keeps the order consistent for any set of
/// timestamps spanning less than `c/2`.
pub fn strictly_newer(local: u64, remote: u64, modulus: u64) -> bool {
    let d = age(local, remote, modulus);
    d > 0 && d < modulus / 2
}

/// Signed difference `a - b` under the windowed order: negative exactly when
/// `b` is strictly newer than `a`.
pub fn windowed_diff(a: u64, b: u64, modulus: u64) -> i64 {
    if strictly_newer(a, b, modulus) {
        -(age(a, b, modulus) as i64)
    } else {
        age(b, a, modulus) as i64
    }
}
