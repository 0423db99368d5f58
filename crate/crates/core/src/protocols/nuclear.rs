//! Measurement-based nuclear preparation and repetitive nuclear readout.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{require_ground, Setup};
use crate::config::Polarity;
use crate::dynamics::Drive;
use crate::error::{Error, Result};
use crate::gates::{SelectivePi, TwoToneSelectivePi, UnconditionalPi};
use crate::register::{HyperfineModel, Ms, NuclearConfig, RegisterState};

/// Which side of the selective π the herald photon selects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeraldMode {
    /// Ex pump to `±1`, π maps the target to `ms = 0`; a photon heralds the
    /// target.
    Target,
    /// A1 pump to `ms = 0`, π moves the target to `ms = −1`; a photon
    /// heralds any other configuration.
    Complement,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeraldOutcome {
    pub state: RegisterState,
    pub heralded: bool,
    pub attempts: u32,
}

/// Heralded preparation, reusable across shots.
#[derive(Debug, Clone)]
pub struct Herald {
    pub gate: SelectivePi,
    pub mode: HeraldMode,
    pub repetitions: u32,
}

impl Herald {
    /// The π pulse addresses the target's `ms = 0 ↔ −1` line.
    pub fn new(setup: &Setup, target: NuclearConfig, repetitions: u32, mode: HeraldMode) -> Result<Self> {
        if repetitions == 0 {
            return Err(Error::Config("herald needs at least one repetition".into()));
        }
        check_target(setup.hyperfine, target)?;
        let gate = SelectivePi::new(setup.hyperfine, target, -1, setup.protocol.selective_rabi)?;
        Ok(Herald { gate, mode, repetitions })
    }

    /// One repetition: pump, selective π, herald window. Returns the counts.
    pub fn step<R: Rng + ?Sized>(&self, setup: &Setup, state: &mut RegisterState, rng: &mut R) -> Result<u32> {
        let p = setup.protocol;
        let drive = match self.mode {
            HeraldMode::Target => Drive::ex(p.pump_ex_power),
            HeraldMode::Complement => Drive::a1(p.pump_a1_power),
        };
        let pump_duration = match self.mode {
            HeraldMode::Target => p.herald_pump_duration,
            HeraldMode::Complement => p.pump_a1_duration,
        };
        setup.laser(state, &drive, pump_duration, rng);
        *state = self.gate.apply(state, setup.hyperfine, rng)?;
        Ok(setup.read(state, p.herald_window, p.herald_power, rng))
    }

    /// One attempt from `state`: heralded iff every repetition sees a
    /// photon. Stops at the first dark repetition.
    pub fn attempt<R: Rng + ?Sized>(&self, setup: &Setup, state: &RegisterState, rng: &mut R) -> Result<(RegisterState, bool)> {
        require_ground(state, "nuclear preparation")?;
        let mut s = *state;
        for _ in 0..self.repetitions {
            if self.step(setup, &mut s, rng)? == 0 {
                return Ok((s, false));
            }
        }
        Ok((s, true))
    }

    /// Independent attempts, each from an electron in `ms` with the nuclei
    /// drawn afresh from the unpolarized mixture, until one heralds or
    /// `herald_max_attempts` run out. Failed runs are discarded, as in
    /// post-selection over many measurement runs.
    pub fn run<R: Rng + ?Sized>(&self, setup: &Setup, ms: Ms, rng: &mut R) -> Result<HeraldOutcome> {
        let max = setup.protocol.herald_max_attempts;
        let mut last = RegisterState::ground(ms, setup.hyperfine.configs()[0]);
        for attempt in 1..=max {
            let start = unpolarized(setup, ms, rng);
            let (s, ok) = self.attempt(setup, &start, rng)?;
            if ok {
                return Ok(HeraldOutcome { state: s, heralded: true, attempts: attempt });
            }
            last = s;
        }
        Ok(HeraldOutcome { state: last, heralded: false, attempts: max })
    }
}

/// Electron in `ms`, nuclei drawn uniformly.
pub fn unpolarized<R: Rng + ?Sized>(setup: &Setup, ms: Ms, rng: &mut R) -> RegisterState {
    let configs = setup.hyperfine.configs();
    RegisterState::ground(ms, configs[rng.random_range(0..configs.len())])
}

fn check_target(model: &HyperfineModel, target: NuclearConfig) -> Result<()> {
    if target.is_valid_for(model.active_nuclei) {
        Ok(())
    } else {
        Err(Error::Config(format!("{target} is not a configuration of the active register")))
    }
}

/// Heralded preparation of `target` with `p` repetitions per attempt,
/// starting each attempt from an electron in `ms = 0`.
pub fn prepare_nuclear<R: Rng + ?Sized>(
    setup: &Setup,
    target: NuclearConfig,
    p: u32,
    mode: HeraldMode,
    rng: &mut R,
) -> Result<HeraldOutcome> {
    Herald::new(setup, target, p, mode)?.run(setup, Ms::Zero, rng)
}

/// One nuclear-readout cycle: pump, mapping pulse(s), short readout.
#[derive(Debug, Clone)]
pub struct NuclearReadout {
    pub target: NuclearConfig,
    pub repetitions: u32,
    pub threshold: u32,
    pub polarity: Polarity,
    mapping: Mapping,
}

#[derive(Debug, Clone)]
enum Mapping {
    /// All `±1 → 0`, then target `0 → −1`: only the target stays dark.
    DarkOnTarget(UnconditionalPi, SelectivePi),
    /// Target `±1 → 0`: only the target becomes bright.
    BrightOnTarget(TwoToneSelectivePi),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuclearReadoutOutcome {
    pub in_target: bool,
    pub total_counts: u32,
    pub step_counts: Vec<u32>,
    /// Optical excitations in segments that began in the target
    /// configuration, excluding the first pump.
    pub target_excitations: u32,
    pub state: RegisterState,
}

impl NuclearReadout {
    pub fn new(setup: &Setup, target: NuclearConfig, repetitions: u32, threshold: u32, polarity: Polarity) -> Result<Self> {
        if repetitions == 0 {
            return Err(Error::Config("nuclear readout needs k >= 1".into()));
        }
        check_target(setup.hyperfine, target)?;
        let p = setup.protocol;
        let mapping = match polarity {
            Polarity::DarkOnTarget => Mapping::DarkOnTarget(
                UnconditionalPi { rabi: p.fast_rabi },
                SelectivePi::new(setup.hyperfine, target, -1, p.selective_rabi)?,
            ),
            Polarity::BrightOnTarget => Mapping::BrightOnTarget(TwoToneSelectivePi::new(setup.hyperfine, target, p.selective_rabi)?),
        };
        Ok(NuclearReadout { target, repetitions, threshold, polarity, mapping })
    }

    /// Readout with `k`, threshold and polarity from the protocol config.
    pub fn from_config(setup: &Setup, target: NuclearConfig) -> Result<Self> {
        let p = setup.protocol;
        Self::new(setup, target, p.nuclear_repetitions, p.nuclear_threshold, p.polarity)
    }

    /// `(in_target, total)` decision rule.
    pub fn declare(&self, total: u32) -> bool {
        match self.polarity {
            Polarity::DarkOnTarget => total < self.threshold,
            Polarity::BrightOnTarget => total >= self.threshold,
        }
    }

    /// Exact output law of the mapping gates from a ground state.
    pub fn mapping_distribution(&self, state: &RegisterState, model: &HyperfineModel) -> Result<Vec<(RegisterState, f64)>> {
        match &self.mapping {
            Mapping::DarkOnTarget(u, s) => {
                let mut out = Vec::with_capacity(4);
                for (mid, p) in u.law(state, model)?.outcomes() {
                    for (end, q) in s.law(&mid, model)?.outcomes() {
                        out.push((end, p * q));
                    }
                }
                Ok(out)
            }
            Mapping::BrightOnTarget(t) => Ok(t.law(state, model)?.outcomes().to_vec()),
        }
    }

    fn apply_mapping<R: Rng + ?Sized>(&self, state: &mut RegisterState, model: &HyperfineModel, rng: &mut R) -> Result<()> {
        match &self.mapping {
            Mapping::DarkOnTarget(u, s) => {
                *state = u.apply(state, model, rng)?;
                *state = s.apply(state, model, rng)?;
            }
            Mapping::BrightOnTarget(t) => *state = t.law(state, model)?.sample(rng),
        }
        Ok(())
    }

    /// `k` cycles; returns the decision and per-step counts.
    pub fn run<R: Rng + ?Sized>(&self, setup: &Setup, state: &RegisterState, rng: &mut R) -> Result<NuclearReadoutOutcome> {
        require_ground(state, "nuclear readout")?;
        let p = setup.protocol;
        let mut s = *state;
        let mut steps = Vec::with_capacity(self.repetitions as usize);
        let mut target_excitations = 0;
        for k in 0..self.repetitions {
            let in_target = s.nuclei == self.target;
            let pumped = setup.laser(&mut s, &Drive::ex(p.pump_ex_power), p.nuclear_pump_duration, rng);
            if k > 0 && in_target {
                target_excitations += pumped.excitations;
            }
            self.apply_mapping(&mut s, setup.hyperfine, rng)?;
            let in_target = s.nuclei == self.target;
            let read = setup.laser(&mut s, &Drive::ex(p.nuclear_step_power), p.nuclear_step_duration, rng);
            if in_target {
                target_excitations += read.excitations;
            }
            steps.push(read.detected);
        }
        let total = steps.iter().sum();
        Ok(NuclearReadoutOutcome {
            in_target: self.declare(total),
            total_counts: total,
            step_counts: steps,
            target_excitations,
            state: s,
        })
    }
}

pub fn repetitive_nuclear_readout<R: Rng + ?Sized>(
    setup: &Setup,
    state: &RegisterState,
    target: NuclearConfig,
    k: u32,
    threshold: u32,
    polarity: Polarity,
    rng: &mut R,
) -> Result<NuclearReadoutOutcome> {
    NuclearReadout::new(setup, target, k, threshold, polarity)?.run(setup, state, rng)
}
