//! Stochastic simulator and protocol engine for optical single-shot readout
//! of an NV-centre electron spin and its nuclear-spin register.

pub mod analysis;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod gates;
pub mod protocols;
pub mod register;
pub mod rng;
pub mod sequencer;

pub use error::{Error, Result};
