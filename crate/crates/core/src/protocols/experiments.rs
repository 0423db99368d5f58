//! Composite experiments: conditioned Rabi, quantum jumps, and the joint
//! electron-nuclear experiment.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::nuclear::{unpolarized as unpolarized_state, Herald, HeraldMode, NuclearReadout};
use super::readout::Declared;
use super::{run_shots, try_run_shots, Setup};
use crate::config::Polarity;
use crate::dynamics::sampler::{illuminate, relax};
use crate::dynamics::Drive;
use crate::error::{Error, Result};
use crate::gates::{continuous_flip_rate, mw_pulse, rabi_for_ceiling, rf_pulse, PulseParams};
use crate::register::{Ms, NuclearConfig, RegisterState};
use crate::rng::ShotRng;

/// Stream labels keep experiments on disjoint random streams.
pub mod labels {
    pub const RABI: u64 = 0x5241_4249;
    pub const JUMPS: u64 = 0x4a55_4d50;
    pub const TWO_QUBIT: u64 = 0x3251_4254;
}

/// Settings of the conditioned Rabi experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RabiSettings {
    pub carrier: f64,
    pub rabi: f64,
    /// First readout segment (µs).
    pub r1: f64,
    /// Both segments together (µs).
    pub total: f64,
    pub power: f64,
    pub threshold: u32,
}

impl RabiSettings {
    /// Carrier on the `ms = −1` branch centre and Ω chosen so the
    /// hyperfine-limited contrast ceiling is `ceiling`.
    pub fn pinned(setup: &Setup, ceiling: f64) -> Result<Self> {
        let p = setup.protocol;
        Ok(RabiSettings {
            carrier: setup.hyperfine.branch_center(-1),
            rabi: rabi_for_ceiling(ceiling, setup.hyperfine.a14)?,
            r1: 0.4,
            total: p.readout_duration,
            power: p.readout_power,
            threshold: p.readout_threshold,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RabiShot {
    pub r1_counts: u32,
    pub r2_counts: u32,
}

/// Per-duration shot records of the conditioned Rabi experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionedRabi {
    pub settings: RabiSettings,
    pub durations: Vec<f64>,
    pub shots: Vec<Vec<RabiShot>>,
}

/// Proportion with its 2-SE half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub value: f64,
    pub half_width: f64,
    pub n: usize,
}

impl Proportion {
    pub fn from_counts(k: usize, n: usize) -> Self {
        if n == 0 {
            return Proportion { value: f64::NAN, half_width: f64::NAN, n };
        }
        let p = k as f64 / n as f64;
        Proportion { value: p, half_width: 2.0 * (p * (1.0 - p) / n as f64).sqrt(), n }
    }

    pub fn se(&self) -> f64 {
        self.half_width / 2.0
    }
}

impl ConditionedRabi {
    /// `P(R2 declares ms = 0)` per duration.
    pub fn unconditioned(&self) -> Vec<Proportion> {
        let t = self.settings.threshold;
        self.shots
            .iter()
            .map(|v| Proportion::from_counts(v.iter().filter(|s| s.r2_counts >= t).count(), v.len()))
            .collect()
    }

    /// `P(R2 declares ms = 0 | R1 has ≥ 1 photon)` per duration.
    pub fn conditioned(&self) -> Vec<Proportion> {
        let t = self.settings.threshold;
        self.shots
            .iter()
            .map(|v| {
                let sel: Vec<_> = v.iter().filter(|s| s.r1_counts >= 1).collect();
                Proportion::from_counts(sel.iter().filter(|s| s.r2_counts >= t).count(), sel.len())
            })
            .collect()
    }

    /// `P(declared ms = 0)` over the whole window, per duration.
    pub fn full_window(&self) -> Vec<Proportion> {
        let t = self.settings.threshold;
        self.shots
            .iter()
            .map(|v| Proportion::from_counts(v.iter().filter(|s| s.r1_counts + s.r2_counts >= t).count(), v.len()))
            .collect()
    }
}

/// One shot: A1 pump to `ms = 0`, MW pulse, split continuous readout.
pub fn rabi_shot<R: Rng + ?Sized>(setup: &Setup, settings: &RabiSettings, duration: f64, rng: &mut R) -> Result<RabiShot> {
    let p = setup.protocol;
    let mut s = unpolarized_state(setup, Ms::Zero, rng);
    setup.laser(&mut s, &Drive::a1(p.pump_a1_power), p.pump_a1_duration, rng);
    s = mw_pulse(&s, &PulseParams::mw(settings.carrier, settings.rabi, duration), setup.hyperfine, rng)?;
    let drive = Drive::ex(settings.power);
    let r1 = illuminate(setup.rates, &mut s, &drive, settings.r1, rng).detected;
    let r2 = illuminate(setup.rates, &mut s, &drive, settings.total - settings.r1, rng).detected;
    Ok(RabiShot { r1_counts: r1, r2_counts: r2 })
}

pub fn conditioned_rabi(setup: &Setup, settings: &RabiSettings, durations: &[f64], n_shots: usize, seed: u64) -> Result<ConditionedRabi> {
    if !(settings.r1 >= 0.0 && settings.r1 <= settings.total) {
        return Err(Error::Config("first segment must fit inside the readout".into()));
    }
    let n = durations.len();
    let flat = try_run_shots(n * n_shots, seed, labels::RABI, |i, rng: &mut ShotRng| {
        rabi_shot(setup, settings, durations[i as usize / n_shots.max(1)], rng)
    })?;
    let shots = if n_shots == 0 { vec![Vec::new(); n] } else { flat.chunks(n_shots).map(<[_]>::to_vec).collect() };
    Ok(ConditionedRabi { settings: *settings, durations: durations.to_vec(), shots })
}

/// Binned continuous readout under weak continuous MW driving.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpTrace {
    pub bin: f64,
    pub mw_rabi: f64,
    /// `ms = 0 ↔ ±1` flip rate induced by the drive (µs⁻¹).
    pub flip_rate: f64,
    pub counts: Vec<u32>,
    /// Bin inferred bright (`counts ≥ threshold`).
    pub bright: Vec<bool>,
}

/// On-resonance incoherent flip rate for a continuous drive of Rabi
/// frequency `mw_rabi`.
pub fn jump_flip_rate(setup: &Setup, mw_rabi: f64) -> f64 {
    continuous_flip_rate(mw_rabi, 0.0, setup.hyperfine.linewidth)
}

pub fn quantum_jump_trace<R: Rng + ?Sized>(setup: &Setup, start: &RegisterState, mw_rabi: f64, total: f64, rng: &mut R) -> Result<JumpTrace> {
    let p = setup.protocol;
    super::require_ground(start, "quantum-jump trace")?;
    if !(mw_rabi >= 0.0) {
        return Err(Error::Config("MW Rabi frequency must be non-negative".into()));
    }
    let n_bins = (total / p.jump_bin).floor() as usize;
    let flip_rate = jump_flip_rate(setup, mw_rabi);
    let drive = Drive::ex(p.jump_power).with_mw_flips(flip_rate);
    let mut s = *start;
    let counts: Vec<u32> = (0..n_bins).map(|_| illuminate(setup.rates, &mut s, &drive, p.jump_bin, rng).detected).collect();
    relax(setup.rates, &mut s, rng);
    let bright = counts.iter().map(|&c| c >= p.jump_threshold).collect();
    Ok(JumpTrace { bin: p.jump_bin, mw_rabi, flip_rate, counts, bright })
}

/// Traces for several drive strengths, one random stream per trace.
pub fn quantum_jump_sweep(setup: &Setup, start: &RegisterState, rabis: &[f64], total: f64, seed: u64) -> Result<Vec<JumpTrace>> {
    try_run_shots(rabis.len(), seed, labels::JUMPS, |i, rng: &mut ShotRng| quantum_jump_trace(setup, start, rabis[i as usize], total, rng))
}

/// MW carrier of the two-qubit experiment: the configured one, or the
/// midpoint of the `mI = −1` and `mI = 0` lines of the `ms = −1` branch.
/// At the midpoint both nuclear states see the same detuning, so the
/// electron rotation does not depend on the nuclear state.
pub fn two_qubit_carrier(setup: &Setup) -> f64 {
    setup.protocol.mw_carrier.unwrap_or_else(|| {
        let h = setup.hyperfine;
        0.5 * (h.line_for(NuclearConfig::n14(-1), -1) + h.line_for(NuclearConfig::n14(0), -1))
    })
}

/// One shot of the two-qubit experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoQubitShot {
    pub rf_index: usize,
    pub mw_index: usize,
    pub heralded: bool,
    pub attempts: u32,
    pub electron_counts: u32,
    pub nuclear_counts: u32,
    pub electron: Declared,
    /// Nucleus declared in `mI = −1`.
    pub nucleus_target: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoQubitTable {
    pub rf_durations: Vec<f64>,
    pub mw_durations: Vec<f64>,
    pub shots_per_pixel: usize,
    /// Row-major by `(rf_index, mw_index)`, then shot.
    pub shots: Vec<TwoQubitShot>,
}

impl TwoQubitTable {
    pub fn pixel(&self, rf_index: usize, mw_index: usize) -> &[TwoQubitShot] {
        let start = (rf_index * self.mw_durations.len() + mw_index) * self.shots_per_pixel;
        &self.shots[start..start + self.shots_per_pixel]
    }

    /// Heralded shot counts `[e][n]` (`e = 0`: electron `ms = 0`; `n = 0`:
    /// nucleus in `mI = −1`).
    pub fn joint_counts(&self, rf_index: usize, mw_index: usize) -> [[usize; 2]; 2] {
        let mut j = [[0; 2]; 2];
        for s in self.pixel(rf_index, mw_index).iter().filter(|s| s.heralded) {
            j[usize::from(s.electron != Declared::Ms0)][usize::from(!s.nucleus_target)] += 1;
        }
        j
    }
}

/// Reusable per-shot procedure of the two-qubit experiment.
#[derive(Debug, Clone)]
pub struct TwoQubitExperiment {
    herald: Herald,
    readout: NuclearReadout,
    carrier: f64,
}

impl TwoQubitExperiment {
    pub fn new(setup: &Setup) -> Result<Self> {
        let p = setup.protocol;
        let target = NuclearConfig::n14(-1);
        Ok(TwoQubitExperiment {
            herald: Herald::new(setup, target, p.herald_repetitions, HeraldMode::Target)?,
            readout: NuclearReadout::new(setup, target, p.two_qubit_steps, p.nuclear_threshold, Polarity::DarkOnTarget)?,
            carrier: two_qubit_carrier(setup),
        })
    }

    /// Herald `(ms, mI) = (0, −1)`, RF, MW, electron readout, nuclear readout.
    pub fn shot<R: Rng + ?Sized>(&self, setup: &Setup, rf: f64, mw: f64, rng: &mut R) -> Result<(bool, u32, u32, u32, bool)> {
        let p = setup.protocol;
        let h = self.herald.run(setup, Ms::Zero, rng)?;
        if !h.heralded {
            return Ok((false, h.attempts, 0, 0, false));
        }
        let mut s = h.state;
        setup.laser(&mut s, &Drive::a1(p.pump_a1_power), p.pump_a1_duration, rng);
        s = rf_pulse(&s, &PulseParams::rf(0, setup.hyperfine.rf_nuclear, p.rf_rabi, rf), setup.hyperfine, rng)?;
        s = mw_pulse(&s, &PulseParams::mw(self.carrier, p.mw_rabi, mw), setup.hyperfine, rng)?;
        let e = setup.read(&mut s, p.electron_readout_duration, p.readout_power, rng);
        let n = self.readout.run(setup, &s, rng)?;
        Ok((true, h.attempts, e, n.total_counts, n.in_target))
    }
}

pub fn two_qubit_experiment(setup: &Setup, rf_grid: &[f64], mw_grid: &[f64], n_shots: usize, seed: u64) -> Result<TwoQubitTable> {
    let exp = TwoQubitExperiment::new(setup)?;
    let per_rf = mw_grid.len() * n_shots;
    let threshold = setup.protocol.readout_threshold;
    let shots = try_run_shots(rf_grid.len() * per_rf, seed, labels::TWO_QUBIT, |i, rng: &mut ShotRng| {
        let i = i as usize;
        let (rf_index, mw_index) = (i / per_rf, (i % per_rf) / n_shots);
        let (heralded, attempts, e, n, target) = exp.shot(setup, rf_grid[rf_index], mw_grid[mw_index], rng)?;
        Ok(TwoQubitShot {
            rf_index,
            mw_index,
            heralded,
            attempts,
            electron_counts: e,
            nuclear_counts: n,
            electron: Declared::from_counts(e, threshold),
            nucleus_target: target,
        })
    })?;
    Ok(TwoQubitTable { rf_durations: rf_grid.to_vec(), mw_durations: mw_grid.to_vec(), shots_per_pixel: n_shots, shots })
}

/// Declared outcomes of a batch of independent shots from `prep`.
pub fn readout_batch(setup: &Setup, prep: &RegisterState, n_shots: usize, seed: u64, label: u64) -> Vec<u32> {
    let cfg = setup.readout_config();
    run_shots(n_shots, seed, label, |_, rng: &mut ShotRng| {
        let mut s = *prep;
        setup.read(&mut s, cfg.duration, cfg.power, rng)
    })
}
