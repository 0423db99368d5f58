//! Microwave and RF pulses acting on ground-state populations.
//!
//! A pulse is a closed-form detuned Rabi rotation evaluated per basis
//! state; only the resulting flip probability survives the pulse.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::register::{ElectronLevel, HyperfineModel, Ms, NuclearConfig, RegisterState};

/// `Ω²/(Ω²+δ²) · sin²(π √(Ω²+δ²) t)` with Ω and δ in MHz, t in µs.
pub fn flip_probability(rabi: f64, detuning: f64, duration: f64) -> f64 {
    if rabi <= 0.0 || duration <= 0.0 {
        return 0.0;
    }
    let w2 = rabi * rabi + detuning * detuning;
    rabi * rabi / w2 * (PI * w2.sqrt() * duration).sin().powi(2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PulseTarget {
    Electron,
    /// Nucleus index: 0 = ¹⁴N, 1 and 2 = ¹³C.
    Nucleus(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseParams {
    pub carrier: f64,
    pub rabi: f64,
    pub duration: f64,
    pub target: PulseTarget,
}

impl PulseParams {
    pub fn mw(carrier: f64, rabi: f64, duration: f64) -> Self {
        PulseParams { carrier, rabi, duration, target: PulseTarget::Electron }
    }

    pub fn rf(nucleus: usize, carrier: f64, rabi: f64, duration: f64) -> Self {
        PulseParams { carrier, rabi, duration, target: PulseTarget::Nucleus(nucleus) }
    }

    /// Resonant π duration `1/(2Ω)`.
    pub fn pi_duration(rabi: f64) -> f64 {
        0.5 / rabi
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rabi >= 0.0 && self.duration >= 0.0) || !self.carrier.is_finite() {
            return Err(Error::Config(format!("invalid pulse {self:?}")));
        }
        Ok(())
    }
}

/// Two possible post-pulse states with probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseLaw {
    pub stay: RegisterState,
    pub flipped: RegisterState,
    pub p_flip: f64,
}

impl PulseLaw {
    fn identity(s: RegisterState) -> Self {
        PulseLaw { stay: s, flipped: s, p_flip: 0.0 }
    }

    /// `[(stay, 1 − p), (flipped, p)]`.
    pub fn outcomes(&self) -> [(RegisterState, f64); 2] {
        [(self.stay, 1.0 - self.p_flip), (self.flipped, self.p_flip)]
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> RegisterState {
        if self.p_flip > 0.0 && rng.random::<f64>() < self.p_flip {
            self.flipped
        } else {
            self.stay
        }
    }
}

fn ground_ms(state: &RegisterState, what: &str) -> Result<Ms> {
    state
        .electron
        .ground()
        .ok_or_else(|| Error::Sequencing(format!("{what} applied while the electron is in {:?}", state.electron)))
}

/// Flip law of a multi-tone MW pulse (tones share Ω and duration). An
/// electron in `ms = ±1` couples only to its own branch; `ms = 0` follows the
/// tone/branch pair with the largest flip probability (ties go to `−1`).
pub fn mw_law(state: &RegisterState, carriers: &[f64], rabi: f64, duration: f64, model: &HyperfineModel) -> Result<PulseLaw> {
    let ms = ground_ms(state, "MW pulse")?;
    if carriers.is_empty() || rabi <= 0.0 || duration <= 0.0 {
        return Ok(PulseLaw::identity(*state));
    }
    let (branch, p) = match ms {
        Ms::Zero => {
            let mut best = (-1i8, 0.0f64);
            for b in [-1i8, 1] {
                let line = model.line_for(state.nuclei, b);
                for &c in carriers {
                    let p = flip_probability(rabi, c - line, duration);
                    if p > best.1 {
                        best = (b, p);
                    }
                }
            }
            best
        }
        _ => {
            let b = ms.value();
            let line = model.line_for(state.nuclei, b);
            // the tone nearest this line dominates
            let c = carriers
                .iter()
                .copied()
                .min_by(|x, y| (x - line).abs().total_cmp(&(y - line).abs()))
                .expect("non-empty");
            (b, flip_probability(rabi, c - line, duration))
        }
    };
    let target = if ms == Ms::Zero { Ms::from_value(branch).expect("branch") } else { Ms::Zero };
    Ok(PulseLaw {
        stay: *state,
        flipped: RegisterState { electron: ElectronLevel::Ground(target), ..*state },
        p_flip: p,
    })
}

/// Single-tone MW pulse on the electron. For `ms = 0`, the addressed branch is
/// the one whose line (for the current nuclei) lies closest to the carrier.
pub fn mw_pulse<R: Rng + ?Sized>(state: &RegisterState, pulse: &PulseParams, model: &HyperfineModel, rng: &mut R) -> Result<RegisterState> {
    Ok(mw_pulse_law(state, pulse, model)?.sample(rng))
}

pub fn mw_pulse_law(state: &RegisterState, pulse: &PulseParams, model: &HyperfineModel) -> Result<PulseLaw> {
    pulse.validate()?;
    if pulse.target != PulseTarget::Electron {
        return Err(Error::Sequencing("MW pulse must target the electron".into()));
    }
    let ms = ground_ms(state, "MW pulse")?;
    if ms != Ms::Zero {
        return mw_law(state, &[pulse.carrier], pulse.rabi, pulse.duration, model);
    }
    let b = [-1i8, 1]
        .into_iter()
        .min_by(|&a, &b| {
            let da = (pulse.carrier - model.line_for(state.nuclei, a)).abs();
            let db = (pulse.carrier - model.line_for(state.nuclei, b)).abs();
            da.total_cmp(&db)
        })
        .expect("two branches");
    let line = model.line_for(state.nuclei, b);
    Ok(PulseLaw {
        stay: *state,
        flipped: RegisterState::ground(Ms::from_value(b).expect("branch"), state.nuclei),
        p_flip: flip_probability(pulse.rabi, pulse.carrier - line, pulse.duration),
    })
}

fn rf_transition(model: &HyperfineModel, nucleus: usize, config: NuclearConfig) -> Result<Option<(NuclearConfig, f64)>> {
    if nucleus >= model.active_nuclei.get() {
        return Err(Error::Config(format!(
            "nucleus {nucleus} is not active ({} active nuclei)",
            model.active_nuclei.get()
        )));
    }
    Ok(match nucleus {
        0 => match config.n14 {
            -1 => Some((config.with_nucleus(0, 0), model.rf_nuclear)),
            0 => Some((config.with_nucleus(0, -1), model.rf_nuclear)),
            _ => None,
        },
        i => Some((config.with_nucleus(i, -config.raw(i)), model.rf_c13)),
    })
}

/// RF pulse on one nucleus (¹⁴N: `m = −1 ↔ 0`), resonant only while the
/// electron sits in `model.rf_manifold`.
pub fn rf_pulse_law(state: &RegisterState, pulse: &PulseParams, model: &HyperfineModel) -> Result<PulseLaw> {
    pulse.validate()?;
    let PulseTarget::Nucleus(i) = pulse.target else {
        return Err(Error::Sequencing("RF pulse must target a nucleus".into()));
    };
    let ms = ground_ms(state, "RF pulse")?;
    let Some((flipped, freq)) = rf_transition(model, i, state.nuclei)? else {
        return Ok(PulseLaw::identity(*state));
    };
    if ms.value() != model.rf_manifold {
        return Ok(PulseLaw::identity(*state));
    }
    Ok(PulseLaw {
        stay: *state,
        flipped: RegisterState { nuclei: flipped, ..*state },
        p_flip: flip_probability(pulse.rabi, pulse.carrier - freq, pulse.duration),
    })
}

pub fn rf_pulse<R: Rng + ?Sized>(state: &RegisterState, pulse: &PulseParams, model: &HyperfineModel, rng: &mut R) -> Result<RegisterState> {
    Ok(rf_pulse_law(state, pulse, model)?.sample(rng))
}

/// Non-fatal selectivity diagnostic.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectivityWarning {
    pub nearest_detuning: f64,
    pub worst_leakage: f64,
}

/// Hyperfine-selective π pulse on one `(config, branch)` line: a
/// multiply-controlled NOT on the electron.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectivePi {
    pub target: NuclearConfig,
    pub branch: i8,
    pub carrier: f64,
    pub rabi: f64,
    pub duration: f64,
    /// Flip probability of every non-target configuration starting from
    /// `ms = 0`.
    pub leakage: Vec<(NuclearConfig, f64)>,
    pub warning: Option<SelectivityWarning>,
}

impl SelectivePi {
    /// Fails if another line lies within one linewidth of the target line.
    pub fn new(model: &HyperfineModel, target: NuclearConfig, branch: i8, rabi: f64) -> Result<Self> {
        let carrier = crate::register::line_for_config(model, target, branch)?;
        if !(rabi > 0.0) {
            return Err(Error::Config("selective pulse needs a positive Rabi frequency".into()));
        }
        let nearest = model
            .lines()
            .into_iter()
            .filter(|l| !(l.config == target && l.branch == branch))
            .map(|l| (l.frequency - carrier).abs())
            .fold(f64::INFINITY, f64::min);
        if nearest < model.linewidth {
            return Err(Error::Config(format!(
                "line of {target} on branch {branch} is not resolved: neighbour at {nearest:.3} MHz"
            )));
        }
        let duration = PulseParams::pi_duration(rabi);
        let leakage: Vec<(NuclearConfig, f64)> = model
            .configs()
            .into_iter()
            .filter(|&c| c != target)
            .map(|c| {
                let s = RegisterState::ground(Ms::Zero, c);
                let p = mw_pulse_law(&s, &PulseParams::mw(carrier, rabi, duration), model).map(|l| l.p_flip).unwrap_or(0.0);
                (c, p)
            })
            .collect();
        let worst = leakage.iter().map(|x| x.1).fold(0.0, f64::max);
        let warning = (nearest < rabi).then_some(SelectivityWarning { nearest_detuning: nearest, worst_leakage: worst });
        Ok(SelectivePi { target, branch, carrier, rabi, duration, leakage, warning })
    }

    pub fn pulse(&self) -> PulseParams {
        PulseParams::mw(self.carrier, self.rabi, self.duration)
    }

    pub fn law(&self, state: &RegisterState, model: &HyperfineModel) -> Result<PulseLaw> {
        mw_pulse_law(state, &self.pulse(), model)
    }

    pub fn apply<R: Rng + ?Sized>(&self, state: &RegisterState, model: &HyperfineModel, rng: &mut R) -> Result<RegisterState> {
        Ok(self.law(state, model)?.sample(rng))
    }
}

/// `(state, target, branch, Ω)` form returning the post-pulse state and the
/// leakage map.
pub fn selective_pi<R: Rng + ?Sized>(
    state: &RegisterState,
    target: NuclearConfig,
    branch: i8,
    model: &HyperfineModel,
    rabi: f64,
    rng: &mut R,
) -> Result<(RegisterState, SelectivePi)> {
    let gate = SelectivePi::new(model, target, branch, rabi)?;
    let out = gate.apply(state, model, rng)?;
    Ok((out, gate))
}

/// Fast two-tone π at both branch centres: `ms = ±1 → 0` for every nuclear
/// configuration, `ms = 0 → −1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnconditionalPi {
    pub rabi: f64,
}

impl UnconditionalPi {
    pub fn law(&self, state: &RegisterState, model: &HyperfineModel) -> Result<PulseLaw> {
        let tones = [model.branch_center(-1), model.branch_center(1)];
        mw_law(state, &tones, self.rabi, PulseParams::pi_duration(self.rabi), model)
    }

    pub fn apply<R: Rng + ?Sized>(&self, state: &RegisterState, model: &HyperfineModel, rng: &mut R) -> Result<RegisterState> {
        Ok(self.law(state, model)?.sample(rng))
    }
}

/// Two-tone selective π on the target's lines of both branches, mapping
/// `ms = ±1 → 0` only for the target configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoToneSelectivePi {
    pub gates: [SelectivePi; 2],
}

impl TwoToneSelectivePi {
    pub fn new(model: &HyperfineModel, target: NuclearConfig, rabi: f64) -> Result<Self> {
        Ok(TwoToneSelectivePi {
            gates: [SelectivePi::new(model, target, -1, rabi)?, SelectivePi::new(model, target, 1, rabi)?],
        })
    }

    pub fn law(&self, state: &RegisterState, model: &HyperfineModel) -> Result<PulseLaw> {
        let g = &self.gates[0];
        mw_law(state, &[self.gates[0].carrier, self.gates[1].carrier], g.rabi, g.duration, model)
    }
}

/// Gaussian lineshape of unit area and width `sigma`.
pub fn gaussian_lineshape(detuning: f64, sigma: f64) -> f64 {
    (-(detuning * detuning) / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * PI).sqrt())
}

/// Incoherent `ms = 0 ↔ ±1` flip rate (µs⁻¹) of a weak continuous MW drive
/// on an inhomogeneously broadened line: `2π² Ω² g(δ)`.
pub fn continuous_flip_rate(rabi: f64, detuning: f64, linewidth: f64) -> f64 {
    2.0 * PI * PI * rabi * rabi * gaussian_lineshape(detuning, linewidth)
}

/// `max_t (1/3) Σ_{δ ∈ {0, ±A}} p(Ω, δ, t)`: best Rabi contrast when the
/// carrier sits on the central line of an unpolarized ¹⁴N triplet.
pub fn rabi_visibility_ceiling(rabi: f64, a14: f64) -> f64 {
    if rabi <= 0.0 {
        return 0.0;
    }
    let avg = |t: f64| (flip_probability(rabi, 0.0, t) + 2.0 * flip_probability(rabi, a14, t)) / 3.0;
    // the first resonant maximum bounds the search window; later maxima
    // are lower because the detuned lines dephase
    let t_max = 4.0 / rabi;
    let n = 4000;
    let (mut best_t, mut best) = (0.0, 0.0);
    for i in 1..=n {
        let t = t_max * i as f64 / n as f64;
        let v = avg(t);
        if v > best {
            best = v;
            best_t = t;
        }
    }
    // golden-section polish around the grid maximum
    let h = t_max / n as f64;
    let (mut a, mut b) = (best_t - h, best_t + h);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..60 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if avg(c) > avg(d) {
            b = d;
        } else {
            a = c;
        }
    }
    best.max(avg(0.5 * (a + b)))
}

/// Ω (MHz) at which [`rabi_visibility_ceiling`] equals `ceiling`.
pub fn rabi_for_ceiling(ceiling: f64, a14: f64) -> Result<f64> {
    if !(1.0 / 3.0 < ceiling && ceiling < 1.0) {
        return Err(Error::Config(format!("visibility ceiling {ceiling} outside (1/3, 1)")));
    }
    let (mut lo, mut hi) = (1e-4 * a14, 100.0 * a14);
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if rabi_visibility_ceiling(mid, a14) < ceiling {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo * hi).sqrt())
}
