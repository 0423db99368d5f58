//! Experiments as composable per-shot procedures.
//!
//! Every procedure acts on one [`RegisterState`] with one RNG stream; batch
//! helpers fan shots out over a thread pool and return results in shot
//! order.

pub mod experiments;
pub mod export;
pub mod nuclear;
pub mod oracle;
pub mod readout;

use rand::Rng;
use rayon::prelude::*;

use crate::config::ProtocolConfig;
use crate::dynamics::sampler::{illuminate, relax, SegmentCounts};
use crate::dynamics::{Drive, RateModel};
use crate::error::{Error, Result};
use crate::register::{HyperfineModel, RegisterState};
use crate::rng::{labelled_rng, ShotRng};

pub use experiments::{conditioned_rabi, quantum_jump_trace, two_qubit_experiment};
pub use nuclear::{prepare_nuclear, repetitive_nuclear_readout, Herald, HeraldMode, HeraldOutcome, NuclearReadout, NuclearReadoutOutcome};
pub use readout::{charge_resonance_check, pump, single_shot_readout, two_segment_readout, Declared, PumpTarget, ReadoutConfig, ShotOutcome};

/// Immutable inputs shared by all shots.
#[derive(Debug, Clone, Copy)]
pub struct Setup<'a> {
    pub rates: &'a RateModel,
    pub hyperfine: &'a HyperfineModel,
    pub protocol: &'a ProtocolConfig,
}

impl<'a> Setup<'a> {
    pub fn new(rates: &'a RateModel, hyperfine: &'a HyperfineModel, protocol: &'a ProtocolConfig) -> Self {
        Setup { rates, hyperfine, protocol }
    }

    /// Illuminate, then let the excited manifold decay with lasers off.
    pub fn laser<R: Rng + ?Sized>(&self, state: &mut RegisterState, drive: &Drive, duration: f64, rng: &mut R) -> SegmentCounts {
        let c = illuminate(self.rates, state, drive, duration, rng);
        relax(self.rates, state, rng);
        c
    }

    /// Ex illumination and total detected counts.
    pub fn read<R: Rng + ?Sized>(&self, state: &mut RegisterState, duration: f64, power: f64, rng: &mut R) -> u32 {
        self.laser(state, &Drive::ex(power), duration, rng).detected
    }
}

pub(crate) fn require_ground(state: &RegisterState, what: &str) -> Result<()> {
    if state.electron.is_ground() {
        Ok(())
    } else {
        Err(Error::Sequencing(format!("{what} requires a ground-state electron, found {:?}", state.electron)))
    }
}

/// Run `n` independent shots; shot `i` owns stream `i` of the labelled
/// master seed. The result order is the shot order whatever the thread
/// count.
pub fn run_shots<T, F>(n: usize, seed: u64, label: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64, &mut ShotRng) -> T + Sync,
{
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = labelled_rng(seed, label, i);
            f(i, &mut rng)
        })
        .collect()
}

/// Fallible variant of [`run_shots`]; the first error in shot order wins.
pub fn try_run_shots<T, F>(n: usize, seed: u64, label: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64, &mut ShotRng) -> Result<T> + Sync,
{
    run_shots(n, seed, label, f).into_iter().collect()
}
