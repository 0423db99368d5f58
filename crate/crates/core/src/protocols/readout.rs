//! Optical pumping and thresholded electron readout.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{require_ground, Setup};
use crate::dynamics::exact::{a1_slow_mode, ex_slow_mode};
use crate::dynamics::sampler::{illuminate, relax};
use crate::dynamics::{Drive, RateModel};
use crate::error::{Error, Result};
use crate::register::RegisterState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Declared {
    #[serde(rename = "ms0")]
    Ms0,
    #[serde(rename = "pm1")]
    Pm1,
}

impl Declared {
    /// `ms = 0` iff `counts ≥ threshold`.
    pub fn from_counts(counts: u32, threshold: u32) -> Self {
        if counts >= threshold {
            Declared::Ms0
        } else {
            Declared::Pm1
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Declared::Ms0 => "ms0",
            Declared::Pm1 => "pm1",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadoutConfig {
    pub duration: f64,
    pub threshold: u32,
    pub power: f64,
}

impl ReadoutConfig {
    pub fn new(duration: f64, threshold: u32, power: f64) -> Result<Self> {
        let c = ReadoutConfig { duration, threshold, power };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration >= 0.0) || self.threshold < 1 || !(self.power > 0.0) {
            return Err(Error::Config(format!("invalid readout {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShotOutcome {
    pub counts: u32,
    pub declared: Declared,
    pub post_state: RegisterState,
    pub accepted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PumpTarget {
    /// A1 illumination pumps into `ms = 0`.
    Ms0,
    /// Ex illumination pumps into `ms = ±1`.
    Pm1,
}

impl PumpTarget {
    pub fn drive(self, power: f64) -> Drive {
        match self {
            PumpTarget::Ms0 => Drive::a1(power),
            PumpTarget::Pm1 => Drive::ex(power),
        }
    }
}

/// Pump-out time (µs) of the pool being emptied.
pub fn pump_time(rates: &RateModel, target: PumpTarget, power: f64) -> f64 {
    let mode = match target {
        PumpTarget::Ms0 => a1_slow_mode(rates, power),
        PumpTarget::Pm1 => ex_slow_mode(rates, power),
    };
    1.0 / mode.rate
}

/// Warning text when `duration` is shorter than three pump-out times.
pub fn underpumping_warning(rates: &RateModel, target: PumpTarget, power: f64, duration: f64) -> Option<String> {
    let tau = pump_time(rates, target, power);
    (duration > 0.0 && duration < 3.0 * tau)
        .then(|| format!("pump of {duration} µs is shorter than 3 pump-out times ({:.3} µs)", 3.0 * tau))
}

/// Optical pumping; returns detected counts during the pulse.
pub fn pump<R: Rng + ?Sized>(
    state: &RegisterState,
    target: PumpTarget,
    duration: f64,
    power: f64,
    rates: &RateModel,
    rng: &mut R,
) -> Result<(RegisterState, u32)> {
    require_ground(state, "pump")?;
    let mut s = *state;
    let c = illuminate(rates, &mut s, &target.drive(power), duration, rng);
    relax(rates, &mut s, rng);
    Ok((s, c.detected))
}

pub fn single_shot_readout<R: Rng + ?Sized>(state: &RegisterState, cfg: &ReadoutConfig, rates: &RateModel, rng: &mut R) -> Result<ShotOutcome> {
    require_ground(state, "readout")?;
    let mut s = *state;
    let c = illuminate(rates, &mut s, &Drive::ex(cfg.power), cfg.duration, rng);
    relax(rates, &mut s, rng);
    Ok(ShotOutcome {
        counts: c.detected,
        declared: Declared::from_counts(c.detected, cfg.threshold),
        post_state: s,
        accepted: true,
    })
}

/// One continuous illumination split at `division` into two thresholded
/// segments.
pub fn two_segment_readout<R: Rng + ?Sized>(
    state: &RegisterState,
    division: f64,
    total: f64,
    cfg: &ReadoutConfig,
    rates: &RateModel,
    rng: &mut R,
) -> Result<(ShotOutcome, ShotOutcome)> {
    require_ground(state, "readout")?;
    if !(0.0 <= division && division <= total) {
        return Err(Error::Config(format!("division {division} outside [0, {total}]")));
    }
    let drive = Drive::ex(cfg.power);
    let mut s = *state;
    let c1 = illuminate(rates, &mut s, &drive, division, rng).detected;
    let mid = s;
    let c2 = illuminate(rates, &mut s, &drive, total - division, rng).detected;
    relax(rates, &mut s, rng);
    let o = |counts, post| ShotOutcome {
        counts,
        declared: Declared::from_counts(counts, cfg.threshold),
        post_state: post,
        accepted: true,
    };
    Ok((o(c1, mid), o(c2, s)))
}

/// Accept with probability `1 − p_reject` when the defect is in the right
/// charge state and on resonance; never otherwise.
pub fn charge_resonance_check<R: Rng + ?Sized>(state: &RegisterState, p_reject: f64, rng: &mut R) -> bool {
    state.charge_ok && (p_reject <= 0.0 || rng.random::<f64>() >= p_reject)
}

impl Setup<'_> {
    pub fn readout_config(&self) -> ReadoutConfig {
        ReadoutConfig {
            duration: self.protocol.readout_duration,
            threshold: self.protocol.readout_threshold,
            power: self.protocol.readout_power,
        }
    }

    pub fn pump_to<R: Rng + ?Sized>(&self, state: &mut RegisterState, target: PumpTarget, rng: &mut R) -> u32 {
        let (d, p) = match target {
            PumpTarget::Ms0 => (self.protocol.pump_a1_duration, self.protocol.pump_a1_power),
            PumpTarget::Pm1 => (self.protocol.pump_ex_duration, self.protocol.pump_ex_power),
        };
        self.laser(state, &target.drive(p), d, rng).detected
    }
}
