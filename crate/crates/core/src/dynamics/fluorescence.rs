//! Shot-averaged time-resolved fluorescence.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rates::{Drive, RateModel};
use super::sampler::illuminate_times;
use crate::error::{Error, Result};
use crate::register::RegisterState;
use crate::rng::labelled_rng;

const LABEL: u64 = 0x464c_554f;

/// Detected counts per bin summed over shots. Rates are in counts/µs per
/// shot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayCurve {
    pub bin_width: f64,
    pub n_shots: usize,
    pub counts: Vec<u64>,
}

impl DecayCurve {
    pub fn bin_centers(&self) -> Vec<f64> {
        (0..self.counts.len()).map(|i| (i as f64 + 0.5) * self.bin_width).collect()
    }

    pub fn rates(&self) -> Vec<f64> {
        let norm = self.n_shots as f64 * self.bin_width;
        self.counts.iter().map(|&c| c as f64 / norm).collect()
    }

    /// Poisson standard error of each rate, with one count as the floor.
    pub fn rate_errors(&self) -> Vec<f64> {
        let norm = self.n_shots as f64 * self.bin_width;
        self.counts.iter().map(|&c| (c.max(1) as f64).sqrt() / norm).collect()
    }

    /// Every `step`-th bin, keeping the time axis.
    pub fn decimate(&self, step: usize) -> DecimatedCurve {
        let step = step.max(1);
        let t = self.bin_centers();
        let r = self.rates();
        let e = self.rate_errors();
        let idx: Vec<usize> = (0..self.counts.len()).step_by(step).collect();
        DecimatedCurve {
            times: idx.iter().map(|&i| t[i]).collect(),
            rates: idx.iter().map(|&i| r[i]).collect(),
            errors: idx.iter().map(|&i| e[i]).collect(),
            exposure: Some(self.n_shots as f64 * self.bin_width),
        }
    }

    pub fn as_points(&self) -> DecimatedCurve {
        self.decimate(1)
    }
}

/// Rate samples on arbitrary times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecimatedCurve {
    pub times: Vec<f64>,
    pub rates: Vec<f64>,
    pub errors: Vec<f64>,
    /// Shots × bin width, when the rates are Poisson counts over it.
    pub exposure: Option<f64>,
}

pub fn fluorescence_decay_curve(
    rates: &RateModel,
    state0: &RegisterState,
    drive: &Drive,
    duration: f64,
    bin_width: f64,
    n_shots: usize,
    seed: u64,
) -> Result<DecayCurve> {
    if n_shots == 0 || !(bin_width > 0.0) || !(duration >= bin_width) {
        return Err(Error::Config("decay curve needs n_shots >= 1 and 0 < bin_width <= duration".into()));
    }
    let n_bins = (duration / bin_width).round() as usize;
    let span = n_bins as f64 * bin_width;
    let counts = (0..n_shots as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = labelled_rng(seed, LABEL, i);
            let mut s = *state0;
            let mut c = vec![0u64; n_bins];
            for t in illuminate_times(rates, &mut s, drive, span, &mut rng) {
                c[((t / bin_width) as usize).min(n_bins - 1)] += 1;
            }
            c
        })
        .reduce(
            || vec![0u64; n_bins],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        );
    Ok(DecayCurve { bin_width, n_shots, counts })
}
