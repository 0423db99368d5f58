use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::register::{ElectronLevel, Ms};

/// Stochastic transition rates of the optically driven register.
///
/// Rates are in µs⁻¹, powers in nW. Excitation and off-resonant leak rates
/// are stored as their saturation asymptotes; the rate at power `P` is
/// `max · s/(1+s)` with `s = P/P_sat`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RateModel {
    pub exc_max_ex: f64,
    pub exc_max_a1: f64,
    pub p_sat: f64,
    pub gamma_rad: f64,
    pub gamma_isc_ex: f64,
    pub gamma_isc_a1: f64,
    pub gamma_singlet: f64,
    /// Singlet branching into `ms = 0`.
    pub beta0: f64,
    /// Electron spin-flip probability per radiative decay.
    pub p_mix_ex: f64,
    pub p_mix_a1: f64,
    /// `ms = ±1 → 0` under Ex illumination.
    pub leak_dark_max: f64,
    /// `ms = 0 → ±1` under A1 illumination.
    pub leak_bright_max: f64,
    /// Nuclear flip probability per radiative decay, all active nuclei.
    pub q_nuc: f64,
    /// Optional per-nucleus override `[¹⁴N, C1, C2]`.
    pub q_nuc_per_nucleus: Option<[f64; 3]>,
    pub eta: f64,
    pub dark_rate: f64,
}

impl Default for RateModel {
    /// Structural defaults only. Optical rates are placeholders until
    /// [`calibrate`](crate::dynamics::calibrate) fills them.
    fn default() -> Self {
        RateModel {
            exc_max_ex: 18.0,
            exc_max_a1: 6.0,
            p_sat: 6.0,
            gamma_rad: 1.0 / 0.012,
            gamma_isc_ex: 0.5,
            gamma_isc_a1: 200.0,
            gamma_singlet: 4.0,
            beta0: 1.0,
            p_mix_ex: 0.017,
            p_mix_a1: 0.02,
            leak_dark_max: 1.0e-3,
            leak_bright_max: 0.01,
            q_nuc: 0.0,
            q_nuc_per_nucleus: None,
            eta: 0.1,
            dark_rate: 0.0,
        }
    }
}

impl RateModel {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("exc_max_ex", self.exc_max_ex),
            ("exc_max_a1", self.exc_max_a1),
            ("gamma_rad", self.gamma_rad),
            ("gamma_isc_ex", self.gamma_isc_ex),
            ("gamma_isc_a1", self.gamma_isc_a1),
            ("gamma_singlet", self.gamma_singlet),
            ("leak_dark_max", self.leak_dark_max),
            ("leak_bright_max", self.leak_bright_max),
            ("dark_rate", self.dark_rate),
        ];
        for (name, v) in rates {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite rate >= 0, got {v}")));
            }
        }
        let mut probs = vec![
            ("beta0", self.beta0),
            ("p_mix_ex", self.p_mix_ex),
            ("p_mix_a1", self.p_mix_a1),
            ("q_nuc", self.q_nuc),
        ];
        if let Some(q) = self.q_nuc_per_nucleus {
            probs.extend([("q_nuc_per_nucleus[0]", q[0]), ("q_nuc_per_nucleus[1]", q[1]), ("q_nuc_per_nucleus[2]", q[2])]);
        }
        for (name, v) in probs {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be a probability, got {v}")));
            }
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::Config(format!("eta must lie in (0, 1], got {}", self.eta)));
        }
        if !(self.p_sat > 0.0) {
            return Err(Error::Config("p_sat must be positive".into()));
        }
        if self.gamma_rad <= 0.0 {
            return Err(Error::Config("gamma_rad must be positive".into()));
        }
        Ok(())
    }

    /// `s/(1+s)` with `s = power/P_sat`.
    pub fn saturation(&self, power: f64) -> f64 {
        let s = power.max(0.0) / self.p_sat;
        s / (1.0 + s)
    }

    pub fn exc_ex(&self, power: f64) -> f64 {
        self.exc_max_ex * self.saturation(power)
    }

    pub fn exc_a1(&self, power: f64) -> f64 {
        self.exc_max_a1 * self.saturation(power)
    }

    pub fn leak_dark(&self, power: f64) -> f64 {
        self.leak_dark_max * self.saturation(power)
    }

    pub fn leak_bright(&self, power: f64) -> f64 {
        self.leak_bright_max * self.saturation(power)
    }

    pub fn q_nuc_for(&self, nucleus: usize) -> f64 {
        match self.q_nuc_per_nucleus {
            Some(q) => q[nucleus],
            None => self.q_nuc,
        }
    }

    /// Electron transition channels out of `level` under `drive`.
    pub fn channels(&self, level: ElectronLevel, charge_ok: bool, drive: &Drive) -> Channels {
        let mut out = Channels::default();
        let optical = charge_ok;
        match level {
            ElectronLevel::Ground(Ms::Zero) => {
                if optical {
                    if let Some(p) = drive.ex_power {
                        out.push(Channel::ExciteEx, self.exc_ex(p));
                    }
                    if let Some(p) = drive.a1_power {
                        out.push(Channel::LeakBright, self.leak_bright(p));
                    }
                }
                out.push(Channel::MwFlip, drive.mw_flip_rate);
            }
            ElectronLevel::Ground(_) => {
                if optical {
                    if let Some(p) = drive.a1_power {
                        out.push(Channel::ExciteA1, self.exc_a1(p));
                    }
                    if let Some(p) = drive.ex_power {
                        out.push(Channel::LeakDark, self.leak_dark(p));
                    }
                }
                out.push(Channel::MwFlip, drive.mw_flip_rate);
            }
            ElectronLevel::ExcitedEx => {
                out.push(Channel::RadiativeEx, self.gamma_rad);
                out.push(Channel::Isc, self.gamma_isc_ex);
            }
            ElectronLevel::ExcitedA1 => {
                out.push(Channel::RadiativeA1, self.gamma_rad);
                out.push(Channel::Isc, self.gamma_isc_a1);
            }
            ElectronLevel::Singlet => out.push(Channel::SingletDecay, self.gamma_singlet),
        }
        out
    }

    /// Electron destinations of `channel` fired from `from`, with probabilities.
    pub fn outcomes(&self, channel: Channel, from: ElectronLevel) -> Outcomes {
        use ElectronLevel::*;
        let mut o = Outcomes::default();
        let minus = Ground(Ms::Minus);
        let zero = Ground(Ms::Zero);
        let plus = Ground(Ms::Plus);
        match channel {
            Channel::ExciteEx => o.push(ExcitedEx, 1.0),
            Channel::ExciteA1 => o.push(ExcitedA1, 1.0),
            Channel::RadiativeEx => {
                o.push(zero, 1.0 - self.p_mix_ex);
                o.push(minus, self.p_mix_ex / 2.0);
                o.push(plus, self.p_mix_ex / 2.0);
            }
            Channel::RadiativeA1 => {
                o.push(zero, self.p_mix_a1);
                o.push(minus, (1.0 - self.p_mix_a1) / 2.0);
                o.push(plus, (1.0 - self.p_mix_a1) / 2.0);
            }
            Channel::Isc => o.push(Singlet, 1.0),
            Channel::SingletDecay => {
                o.push(zero, self.beta0);
                o.push(minus, (1.0 - self.beta0) / 2.0);
                o.push(plus, (1.0 - self.beta0) / 2.0);
            }
            Channel::LeakDark => o.push(zero, 1.0),
            Channel::LeakBright => {
                o.push(minus, 0.5);
                o.push(plus, 0.5);
            }
            Channel::MwFlip => {
                if from == zero {
                    o.push(minus, 0.5);
                    o.push(plus, 0.5);
                } else {
                    o.push(zero, 1.0);
                }
            }
        }
        o
    }
}

/// Laser and microwave drive applied during an evolution segment.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Drive {
    pub ex_power: Option<f64>,
    pub a1_power: Option<f64>,
    /// Incoherent MW-induced `ms = 0 ↔ ±1` flip rate (µs⁻¹).
    pub mw_flip_rate: f64,
}

impl Drive {
    pub fn none() -> Self {
        Drive::default()
    }

    pub fn ex(power: f64) -> Self {
        Drive {
            ex_power: Some(power),
            ..Drive::default()
        }
    }

    pub fn a1(power: f64) -> Self {
        Drive {
            a1_power: Some(power),
            ..Drive::default()
        }
    }

    pub fn both(ex_power: f64, a1_power: f64) -> Self {
        Drive {
            ex_power: Some(ex_power),
            a1_power: Some(a1_power),
            ..Drive::default()
        }
    }

    pub fn with_mw_flips(mut self, rate: f64) -> Self {
        self.mw_flip_rate = rate;
        self
    }

    pub fn is_dark(&self) -> bool {
        self.ex_power.is_none() && self.a1_power.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    ExciteEx,
    ExciteA1,
    RadiativeEx,
    RadiativeA1,
    Isc,
    SingletDecay,
    LeakDark,
    LeakBright,
    MwFlip,
}

impl Channel {
    pub fn emits_photon(self) -> bool {
        matches!(self, Channel::RadiativeEx | Channel::RadiativeA1)
    }

    /// Laser-induced transition out of the ground manifold.
    pub fn is_optical_excitation(self) -> bool {
        matches!(
            self,
            Channel::ExciteEx | Channel::ExciteA1 | Channel::LeakDark | Channel::LeakBright
        )
    }
}

/// Up to three `(channel, rate)` pairs; zero rates are dropped.
#[derive(Debug, Clone, Copy, Default)]
pub struct Channels {
    items: [(Option<Channel>, f64); 3],
    len: usize,
}

impl Channels {
    fn push(&mut self, c: Channel, rate: f64) {
        if rate > 0.0 {
            self.items[self.len] = (Some(c), rate);
            self.len += 1;
        }
    }

    pub fn total(&self) -> f64 {
        self.items[..self.len].iter().map(|x| x.1).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Channel, f64)> + '_ {
        self.items[..self.len].iter().map(|&(c, r)| (c.expect("pushed"), r))
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Outcomes {
    items: [(Option<ElectronLevel>, f64); 3],
    len: usize,
}

impl Outcomes {
    fn push(&mut self, level: ElectronLevel, p: f64) {
        if p > 0.0 {
            self.items[self.len] = (Some(level), p);
            self.len += 1;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ElectronLevel, f64)> + '_ {
        self.items[..self.len].iter().map(|&(l, p)| (l.expect("pushed"), p))
    }

    /// Pick an outcome from a uniform variate in `[0, 1)`.
    pub fn pick(&self, u: f64) -> ElectronLevel {
        let mut acc = 0.0;
        for (level, p) in self.iter() {
            acc += p;
            if u < acc {
                return level;
            }
        }
        self.items[self.len - 1].0.expect("non-empty outcomes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outcome_probabilities_sum_to_one() {
        let m = RateModel::default();
        for level in ElectronLevel::ALL {
            for charge_ok in [true, false] {
                let d = Drive::both(3.0, 3.0).with_mw_flips(0.1);
                for (c, r) in m.channels(level, charge_ok, &d).iter() {
                    assert!(r > 0.0);
                    let s: f64 = m.outcomes(c, level).iter().map(|x| x.1).sum();
                    assert!((s - 1.0).abs() < 1e-12, "{c:?} from {level:?}");
                }
            }
        }
    }

    #[test]
    fn optical_selection_rules() {
        let m = RateModel::default();
        let ex = Drive::ex(5.0);
        let a1 = Drive::a1(5.0);
        let has = |lvl, d: &Drive, ch| m.channels(lvl, true, d).iter().any(|(c, _)| c == ch);
        assert!(has(ElectronLevel::Ground(Ms::Zero), &ex, Channel::ExciteEx));
        assert!(!has(ElectronLevel::Ground(Ms::Minus), &ex, Channel::ExciteEx));
        assert!(has(ElectronLevel::Ground(Ms::Plus), &a1, Channel::ExciteA1));
        assert!(!has(ElectronLevel::Ground(Ms::Zero), &a1, Channel::ExciteA1));
        // charge/resonance failure: no optical channel at all
        for lvl in [ElectronLevel::Ground(Ms::Zero), ElectronLevel::Ground(Ms::Minus)] {
            assert!(m.channels(lvl, false, &Drive::both(5.0, 5.0)).is_empty());
        }
    }

    #[test]
    fn saturation_law_is_half_at_psat() {
        let m = RateModel::default();
        assert!((m.exc_ex(m.p_sat) - 0.5 * m.exc_max_ex).abs() < 1e-12);
        assert_eq!(m.exc_ex(0.0), 0.0);
    }

    #[test]
    fn validate_rejects_bad_eta() {
        let m = RateModel {
            eta: 0.0,
            ..RateModel::default()
        };
        assert!(m.validate().is_err());
        assert!(RateModel::default().validate().is_ok());
    }
}
