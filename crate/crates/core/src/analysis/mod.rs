//! Estimation and optimization on simulated records.

pub mod dwell;
pub mod fidelity;
pub mod fit;
pub mod spectrum;

pub use dwell::{dwell_statistics, DwellStatistics};
pub use fidelity::{estimate_fidelity, optimize_division, optimize_window, FidelityReport};
pub use fit::{fit_exponential_decay, fit_rabi, RabiLine, Value};
pub use spectrum::{esr_spectrum, fit_gaussians, EsrSettings, Spectrum};
