//! Flat key-value configuration (TOML syntax, top-level keys only).
//!
//! One file carries the rate model, the hyperfine model and the protocol
//! settings side by side; every key name is unique across the three, and
//! each section ignores keys it does not own. Missing keys take defaults.

use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::dynamics::{CalibrationTargets, RateModel};
use crate::error::{Error, Result};
use crate::register::HyperfineModel;

/// Which outcome of the nuclear readout is photon-free.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    /// Target configuration ends dark (no optical cycling while in target).
    DarkOnTarget,
    BrightOnTarget,
}

/// Protocol timings and powers. Durations in µs, powers in nW, Rabi
/// frequencies in MHz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    pub readout_duration: f64,
    pub readout_threshold: u32,
    pub readout_power: f64,
    pub pump_ex_duration: f64,
    pub pump_ex_power: f64,
    pub pump_a1_duration: f64,
    pub pump_a1_power: f64,
    pub herald_window: f64,
    pub herald_power: f64,
    /// Ex re-pump before every herald repetition.
    pub herald_pump_duration: f64,
    pub herald_repetitions: u32,
    pub herald_max_attempts: u32,
    /// Ω of hyperfine-selective π pulses.
    pub selective_rabi: f64,
    /// Ω of the unconditional two-tone π pulse.
    pub fast_rabi: f64,
    /// Ω of the ESR spectrum π pulse; `None` matches the π-pulse line
    /// profile to the Gaussian linewidth.
    pub spectrum_rabi: Option<f64>,
    pub nuclear_pump_duration: f64,
    pub nuclear_step_duration: f64,
    pub nuclear_step_power: f64,
    pub nuclear_repetitions: u32,
    /// Target declared when total counts fall below this value
    /// (dark-on-target) or reach it (bright-on-target).
    pub nuclear_threshold: u32,
    pub polarity: Polarity,
    pub jump_bin: f64,
    pub jump_power: f64,
    pub jump_threshold: u32,
    /// MW Rabi frequency of the two-qubit experiment.
    pub mw_rabi: f64,
    /// MW carrier of the two-qubit experiment; `None` uses `1000·f0`.
    pub mw_carrier: Option<f64>,
    pub rf_rabi: f64,
    pub electron_readout_duration: f64,
    pub two_qubit_steps: u32,
    pub p_reject: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            readout_duration: 40.0,
            readout_threshold: 1,
            readout_power: 1.0,
            pump_ex_duration: 100.0,
            pump_ex_power: 4.8,
            pump_a1_duration: 10.0,
            pump_a1_power: 7.4,
            herald_window: 0.4,
            herald_power: 4.8,
            herald_pump_duration: 40.0,
            herald_repetitions: 1,
            herald_max_attempts: 10_000,
            selective_rabi: 0.2,
            fast_rabi: 40.0,
            spectrum_rabi: None,
            nuclear_pump_duration: 40.0,
            nuclear_step_duration: 10.0,
            nuclear_step_power: 1.0,
            nuclear_repetitions: 3,
            nuclear_threshold: 1,
            polarity: Polarity::DarkOnTarget,
            jump_bin: 5.0,
            jump_power: 4.8,
            jump_threshold: 1,
            mw_rabi: 1.0,
            mw_carrier: None,
            rf_rabi: 0.01,
            electron_readout_duration: 15.0,
            two_qubit_steps: 5,
            p_reject: 0.0,
        }
    }
}

impl ProtocolConfig {
    /// Settings for the three-nucleus register, whose closest lines are
    /// 0.13 MHz apart.
    pub fn nv_a() -> Self {
        ProtocolConfig {
            selective_rabi: 0.03,
            nuclear_repetitions: 6,
            nuclear_threshold: 3,
            ..ProtocolConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let non_negative = [
            ("readout_duration", self.readout_duration),
            ("pump_ex_duration", self.pump_ex_duration),
            ("pump_a1_duration", self.pump_a1_duration),
            ("herald_window", self.herald_window),
            ("herald_pump_duration", self.herald_pump_duration),
            ("nuclear_pump_duration", self.nuclear_pump_duration),
            ("nuclear_step_duration", self.nuclear_step_duration),
            ("electron_readout_duration", self.electron_readout_duration),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite duration >= 0")));
            }
        }
        let positive = [
            ("readout_power", self.readout_power),
            ("pump_ex_power", self.pump_ex_power),
            ("pump_a1_power", self.pump_a1_power),
            ("herald_power", self.herald_power),
            ("nuclear_step_power", self.nuclear_step_power),
            ("jump_power", self.jump_power),
            ("jump_bin", self.jump_bin),
            ("selective_rabi", self.selective_rabi),
            ("fast_rabi", self.fast_rabi),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.readout_threshold == 0 {
            return Err(Error::Config("readout_threshold must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.p_reject) {
            return Err(Error::Config("p_reject must be a probability".into()));
        }
        Ok(())
    }

    pub fn spectrum_rabi_for(&self, hyperfine: &HyperfineModel) -> f64 {
        // π-pulse response FWHM ≈ 1.60 Ω; Gaussian FWHM = 2.3548 σ
        self.spectrum_rabi.unwrap_or(hyperfine.linewidth * 2.3548 / 1.5995)
    }
}

/// Rate model, hyperfine model and protocol settings of one simulation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimConfig {
    pub rates: RateModel,
    pub hyperfine: HyperfineModel,
    pub protocol: ProtocolConfig,
}

fn section<T: DeserializeOwned>(table: &toml::Table) -> Result<T> {
    Ok(T::deserialize(toml::Value::Table(table.clone()))?)
}

fn merge(into: &mut toml::Table, from: toml::Table) -> Result<()> {
    for (k, v) in from {
        if into.insert(k.clone(), v).is_some() {
            return Err(Error::Config(format!("duplicate configuration key {k}")));
        }
    }
    Ok(())
}

fn to_table<T: Serialize>(v: &T) -> Result<toml::Table> {
    Ok(toml::Table::try_from(v)?)
}

impl SimConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse()?;
        if let Some((k, _)) = table.iter().find(|(_, v)| v.is_table()) {
            return Err(Error::Config(format!("nested section [{k}] not allowed: keys are flat")));
        }
        let cfg = SimConfig {
            rates: section(&table)?,
            hyperfine: section(&table)?,
            protocol: section(&table)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.rates.validate()?;
        self.hyperfine.validate()?;
        self.protocol.validate()
    }

    pub fn to_toml(&self) -> Result<String> {
        let mut t = to_table(&self.rates)?;
        merge(&mut t, to_table(&self.hyperfine)?)?;
        merge(&mut t, to_table(&self.protocol)?)?;
        Ok(toml::to_string(&t)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }
}

pub fn parse_targets(text: &str) -> Result<CalibrationTargets> {
    let table: toml::Table = text.parse()?;
    section(&table)
}

pub fn load_targets(path: &Path) -> Result<CalibrationTargets> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_targets(&text)
}

pub fn targets_to_toml(t: &CalibrationTargets) -> Result<String> {
    Ok(toml::to_string(&to_table(t)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_unique_keys() {
        let mut cfg = SimConfig::default();
        cfg.rates.q_nuc_per_nucleus = Some([0.1, 0.2, 0.3]);
        cfg.protocol.mw_carrier = Some(2875.1);
        let text = cfg.to_toml().unwrap();
        assert_eq!(SimConfig::parse(&text).unwrap(), cfg);
    }

    #[test]
    fn missing_keys_default_and_unknown_keys_are_ignored() {
        let cfg = SimConfig::parse("eta = 0.2\nlinewidth = 0.1\nsomething_else = 3\n").unwrap();
        assert_eq!(cfg.rates.eta, 0.2);
        assert_eq!(cfg.hyperfine.linewidth, 0.1);
        assert_eq!(cfg.protocol, ProtocolConfig::default());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(SimConfig::parse("eta = 1.5").is_err());
        assert!(SimConfig::parse("active_nuclei = 4").is_err());
        assert!(SimConfig::parse("[rates]\neta = 0.1").is_err());
    }

    #[test]
    fn targets_round_trip() {
        let t = CalibrationTargets::default();
        assert_eq!(parse_targets(&targets_to_toml(&t).unwrap()).unwrap(), t);
    }
}
