//! Discrete state space of the electron + nuclear-spin register and the
//! hyperfine bookkeeping that maps nuclear configurations to ESR lines.
//!
//! # Nuclear configurations
//!
//! The register carries up to three nuclei: the host ¹⁴N (`m ∈ {−1, 0, +1}`)
//! and two ¹³C (`m ∈ {−½, +½}`). ¹³C projections are stored doubled
//! (`±1`) so every field stays integral; an inactive ¹³C is frozen at `0`.
//!
//! Enumeration order is fixed: ¹⁴N outermost (−1, 0, +1), then C1
//! (−½, +½), then C2 (−½, +½). With one active nucleus only the ¹⁴N loop is
//! present.
//!
//! # Line positions
//!
//! The ESR line for electron branch `b ∈ {−1, +1}` (transition `0 ↔ b`) is
//!
//! ```text
//! f = 1000·f0 + b·zeeman/2 − b·(A14·m14 − AC1·mC1 − AC2·mC2)
//! ```
//!
//! so on the `−1` branch the lowest line belongs to `(−1, +½, +½)`, and the
//! outermost lines of the full spectrum are `m14 = −1` on both branches.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ground-state electron spin projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Ms {
    Minus,
    Zero,
    Plus,
}

impl Ms {
    pub const ALL: [Ms; 3] = [Ms::Minus, Ms::Zero, Ms::Plus];

    pub fn value(self) -> i8 {
        match self {
            Ms::Minus => -1,
            Ms::Zero => 0,
            Ms::Plus => 1,
        }
    }

    pub fn from_value(v: i8) -> Option<Ms> {
        match v {
            -1 => Some(Ms::Minus),
            0 => Some(Ms::Zero),
            1 => Some(Ms::Plus),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        (self.value() + 1) as usize
    }

    pub fn is_bright(self) -> bool {
        self == Ms::Zero
    }
}

/// Electron level in the effective optical model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ElectronLevel {
    Ground(Ms),
    ExcitedEx,
    ExcitedA1,
    Singlet,
}

impl ElectronLevel {
    pub const ALL: [ElectronLevel; 6] = [
        ElectronLevel::Ground(Ms::Minus),
        ElectronLevel::Ground(Ms::Zero),
        ElectronLevel::Ground(Ms::Plus),
        ElectronLevel::ExcitedEx,
        ElectronLevel::ExcitedA1,
        ElectronLevel::Singlet,
    ];

    pub fn index(self) -> usize {
        match self {
            ElectronLevel::Ground(ms) => ms.index(),
            ElectronLevel::ExcitedEx => 3,
            ElectronLevel::ExcitedA1 => 4,
            ElectronLevel::Singlet => 5,
        }
    }

    pub fn from_index(i: usize) -> ElectronLevel {
        Self::ALL[i]
    }

    pub fn ground(self) -> Option<Ms> {
        match self {
            ElectronLevel::Ground(ms) => Some(ms),
            _ => None,
        }
    }

    pub fn is_ground(self) -> bool {
        matches!(self, ElectronLevel::Ground(_))
    }
}

/// Number of nuclei taking part in the register (1, 2 or 3).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct ActiveNuclei(u8);

impl ActiveNuclei {
    pub const ONE: ActiveNuclei = ActiveNuclei(1);
    pub const THREE: ActiveNuclei = ActiveNuclei(3);

    pub fn new(n: usize) -> Result<Self> {
        if (1..=3).contains(&n) {
            Ok(ActiveNuclei(n as u8))
        } else {
            Err(Error::Config(format!(
                "active nucleus count must be 1, 2 or 3, got {n}"
            )))
        }
    }

    pub fn get(self) -> usize {
        self.0 as usize
    }

    /// Number of enumerable nuclear configurations.
    pub fn n_configs(self) -> usize {
        match self.0 {
            1 => 3,
            2 => 6,
            _ => 12,
        }
    }

    /// All configurations in the fixed enumeration order.
    pub fn configs(self) -> Vec<NuclearConfig> {
        let c_values: &[i8] = &[-1, 1];
        let mut out = Vec::with_capacity(self.n_configs());
        for n14 in [-1i8, 0, 1] {
            match self.0 {
                1 => out.push(NuclearConfig { n14, c1: 0, c2: 0 }),
                2 => {
                    for &c1 in c_values {
                        out.push(NuclearConfig { n14, c1, c2: 0 });
                    }
                }
                _ => {
                    for &c1 in c_values {
                        for &c2 in c_values {
                            out.push(NuclearConfig { n14, c1, c2 });
                        }
                    }
                }
            }
        }
        out
    }

    /// Position of `config` in [`configs`](Self::configs).
    pub fn config_index(self, config: NuclearConfig) -> Option<usize> {
        if !config.is_valid_for(self) {
            return None;
        }
        let i14 = (config.n14 + 1) as usize;
        let ci = |c: i8| if c < 0 { 0 } else { 1 };
        Some(match self.0 {
            1 => i14,
            2 => i14 * 2 + ci(config.c1),
            _ => i14 * 4 + ci(config.c1) * 2 + ci(config.c2),
        })
    }
}

impl TryFrom<u8> for ActiveNuclei {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        ActiveNuclei::new(v as usize)
    }
}

impl From<ActiveNuclei> for u8 {
    fn from(v: ActiveNuclei) -> u8 {
        v.0
    }
}

/// Nuclear spin configuration. ¹³C projections are stored as `2·m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NuclearConfig {
    pub n14: i8,
    pub c1: i8,
    pub c2: i8,
}

impl NuclearConfig {
    pub const fn n14(n14: i8) -> Self {
        NuclearConfig { n14, c1: 0, c2: 0 }
    }

    pub const fn new(n14: i8, c1: i8, c2: i8) -> Self {
        NuclearConfig { n14, c1, c2 }
    }

    pub fn is_valid_for(self, active: ActiveNuclei) -> bool {
        let c_ok = |c: i8, on: bool| if on { c == -1 || c == 1 } else { c == 0 };
        (-1..=1).contains(&self.n14)
            && c_ok(self.c1, active.get() >= 2)
            && c_ok(self.c2, active.get() >= 3)
    }

    /// Projection of nucleus `i` (0 = ¹⁴N, 1 = C1, 2 = C2) in units of ħ.
    pub fn projection(self, i: usize) -> f64 {
        match i {
            0 => self.n14 as f64,
            1 => self.c1 as f64 / 2.0,
            _ => self.c2 as f64 / 2.0,
        }
    }

    pub fn with_nucleus(mut self, i: usize, raw: i8) -> Self {
        match i {
            0 => self.n14 = raw,
            1 => self.c1 = raw,
            _ => self.c2 = raw,
        }
        self
    }

    pub fn raw(self, i: usize) -> i8 {
        match i {
            0 => self.n14,
            1 => self.c1,
            _ => self.c2,
        }
    }
}

impl fmt::Display for NuclearConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let half = |c: i8| match c {
            1 => "+1/2",
            -1 => "-1/2",
            _ => "-",
        };
        write!(f, "({:+}, {}, {})", self.n14, half(self.c1), half(self.c2))
    }
}

/// Full register state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RegisterState {
    pub electron: ElectronLevel,
    pub nuclei: NuclearConfig,
    /// NV⁻ and on optical resonance. When false the defect is dark to the
    /// resonant lasers.
    pub charge_ok: bool,
}

impl RegisterState {
    pub fn ground(ms: Ms, nuclei: NuclearConfig) -> Self {
        RegisterState {
            electron: ElectronLevel::Ground(ms),
            nuclei,
            charge_ok: true,
        }
    }
}

/// Hyperfine constants and ESR bookkeeping. All splittings in MHz, `f0` in GHz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperfineModel {
    pub a14: f64,
    pub ac1: f64,
    pub ac2: f64,
    pub zeeman_split: f64,
    pub f0_ghz: f64,
    /// ¹⁴N `m = −1 ↔ 0` transition frequency in the addressed manifold.
    pub rf_nuclear: f64,
    /// ¹³C flip frequency in the addressed manifold.
    pub rf_c13: f64,
    /// Electron manifold (`ms`) in which the RF transitions are resonant.
    pub rf_manifold: i8,
    /// Gaussian ESR line sigma.
    pub linewidth: f64,
    pub active_nuclei: ActiveNuclei,
}

impl Default for HyperfineModel {
    fn default() -> Self {
        HyperfineModel::nv_b()
    }
}

/// One ESR line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperfineLine {
    pub frequency: f64,
    pub branch: i8,
    pub config: NuclearConfig,
}

impl HyperfineModel {
    /// Single-¹⁴N register calibrated so the `(0,−1) ↔ (−1,−1)` line sits at
    /// 2874 MHz, with the Zeeman splitting equal to the ¹⁴N splitting so the
    /// central lines coincide pairwise. Hyperfine values are illustrative.
    pub fn nv_b() -> Self {
        HyperfineModel {
            a14: 2.2,
            ac1: 0.4,
            ac2: 0.13,
            zeeman_split: 2.2,
            f0_ghz: 2.8773,
            rf_nuclear: 4.9464,
            rf_c13: 0.4,
            rf_manifold: 0,
            linewidth: 0.25,
            active_nuclei: ActiveNuclei::ONE,
        }
    }

    /// Three-nucleus register with the two electron branches well separated.
    pub fn nv_a() -> Self {
        HyperfineModel {
            zeeman_split: 40.0,
            linewidth: 0.02,
            active_nuclei: ActiveNuclei::THREE,
            ..HyperfineModel::nv_b()
        }
    }

    /// Magnetic field expressed as the `ms = ±1` Zeeman splitting
    /// (2 × 2.8 MHz/G).
    pub fn with_field_gauss(mut self, gauss: f64) -> Self {
        self.zeeman_split = 5.6 * gauss;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("a14", self.a14),
            ("ac1", self.ac1),
            ("ac2", self.ac2),
            ("f0_ghz", self.f0_ghz),
            ("linewidth", self.linewidth),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.zeeman_split >= 0.0) {
            return Err(Error::Config("zeeman_split must be non-negative".into()));
        }
        if Ms::from_value(self.rf_manifold).is_none() {
            return Err(Error::Config("rf_manifold must be -1, 0 or 1".into()));
        }
        Ok(())
    }

    /// Branch centre (MHz) for `branch ∈ {−1, +1}`.
    pub fn branch_center(&self, branch: i8) -> f64 {
        1000.0 * self.f0_ghz + branch as f64 * self.zeeman_split / 2.0
    }

    fn hyperfine_shift(&self, config: NuclearConfig, branch: i8, active: ActiveNuclei) -> f64 {
        let mut s = self.a14 * config.projection(0);
        if active.get() >= 2 {
            s -= self.ac1 * config.projection(1);
        }
        if active.get() >= 3 {
            s -= self.ac2 * config.projection(2);
        }
        -(branch as f64) * s
    }

    pub fn line_for(&self, config: NuclearConfig, branch: i8) -> f64 {
        self.branch_center(branch) + self.hyperfine_shift(config, branch, self.active_nuclei)
    }

    pub fn lines(&self) -> Vec<HyperfineLine> {
        enumerate_hyperfine_lines(self, self.active_nuclei.get()).expect("validated count")
    }

    pub fn configs(&self) -> Vec<NuclearConfig> {
        self.active_nuclei.configs()
    }

    /// Distinct line positions, merging lines closer than `linewidth/10`.
    /// Each entry carries the members of the group.
    pub fn distinct_lines(&self, branch: Option<i8>) -> Vec<(f64, Vec<HyperfineLine>)> {
        let tol = self.degeneracy_tolerance();
        let mut groups: Vec<(f64, Vec<HyperfineLine>)> = Vec::new();
        for line in self.lines() {
            if branch.is_some_and(|b| b != line.branch) {
                continue;
            }
            match groups.last_mut() {
                Some((f, members)) if (line.frequency - *f).abs() < tol => members.push(line),
                _ => groups.push((line.frequency, vec![line])),
            }
        }
        groups
    }

    pub fn degeneracy_tolerance(&self) -> f64 {
        self.linewidth / 10.0
    }
}

fn branch_check(branch: i8) -> Result<()> {
    if branch == -1 || branch == 1 {
        Ok(())
    } else {
        Err(Error::Config(format!("branch must be -1 or +1, got {branch}")))
    }
}

/// All `2 × #configs` ESR lines sorted ascending by frequency. Ties are
/// broken by branch and then enumeration order so the output is stable.
pub fn enumerate_hyperfine_lines(
    model: &HyperfineModel,
    n_active_nuclei: usize,
) -> Result<Vec<HyperfineLine>> {
    let active = ActiveNuclei::new(n_active_nuclei)?;
    let mut lines = Vec::with_capacity(2 * active.n_configs());
    for branch in [-1i8, 1] {
        for config in active.configs() {
            lines.push(HyperfineLine {
                frequency: model.branch_center(branch) + model.hyperfine_shift(config, branch, active),
                branch,
                config,
            });
        }
    }
    lines.sort_by(|a, b| a.frequency.total_cmp(&b.frequency));
    Ok(lines)
}

/// Line frequency for `config` on `branch`, using the model's active count.
pub fn line_for_config(model: &HyperfineModel, config: NuclearConfig, branch: i8) -> Result<f64> {
    branch_check(branch)?;
    if !config.is_valid_for(model.active_nuclei) {
        return Err(Error::Config(format!(
            "configuration {config} is not valid for {} active nuclei",
            model.active_nuclei.get()
        )));
    }
    Ok(model.line_for(config, branch))
}

/// Inverse lookup: the unique `(config, branch)` whose line matches
/// `frequency` within the degeneracy tolerance.
pub fn config_for_line(model: &HyperfineModel, frequency: f64) -> Result<(NuclearConfig, i8)> {
    let tol = model.degeneracy_tolerance();
    let matches: Vec<(NuclearConfig, i8)> = model
        .lines()
        .into_iter()
        .filter(|l| (l.frequency - frequency).abs() < tol)
        .map(|l| (l.config, l.branch))
        .collect();
    match matches.len() {
        0 => Err(Error::NoSuchLine(frequency)),
        1 => Ok(matches[0]),
        _ => Err(Error::Ambiguous { frequency, matches }),
    }
}

/// Ground manifold of the register in a fixed order: electron `ms` outer
/// (−1, 0, +1), nuclear configuration inner.
#[derive(Debug, Clone)]
pub struct GroundSpace {
    pub active: ActiveNuclei,
    configs: Vec<NuclearConfig>,
}

impl GroundSpace {
    pub fn new(active: ActiveNuclei) -> Self {
        GroundSpace {
            active,
            configs: active.configs(),
        }
    }

    pub fn len(&self) -> usize {
        3 * self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn n_configs(&self) -> usize {
        self.configs.len()
    }

    pub fn configs(&self) -> &[NuclearConfig] {
        &self.configs
    }

    pub fn state(&self, index: usize) -> RegisterState {
        let nc = self.configs.len();
        RegisterState::ground(Ms::ALL[index / nc], self.configs[index % nc])
    }

    pub fn index(&self, state: &RegisterState) -> Option<usize> {
        let ms = state.electron.ground()?;
        let c = self.active.config_index(state.nuclei)?;
        Some(ms.index() * self.configs.len() + c)
    }

    pub fn index_of(&self, ms: Ms, config: NuclearConfig) -> Option<usize> {
        self.index(&RegisterState::ground(ms, config))
    }

    pub fn states(&self) -> Vec<RegisterState> {
        (0..self.len()).map(|i| self.state(i)).collect()
    }
}

/// Ordered list of ground-manifold register states.
pub fn state_space(n_active_nuclei: usize) -> Result<Vec<RegisterState>> {
    Ok(GroundSpace::new(ActiveNuclei::new(n_active_nuclei)?).states())
}
