//! Pulsed ESR spectra and constrained Gaussian line fits.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::fit::{linear_least_squares, Value};
use crate::dynamics::Drive;
use crate::error::{Error, Result};
use crate::gates::{mw_pulse, PulseParams};
use crate::protocols::experiments::Proportion;
use crate::protocols::nuclear::{unpolarized, Herald, HeraldMode};
use crate::protocols::oracle::{herald_law, Oracle};
use crate::protocols::{try_run_shots, Setup};
use crate::register::{HyperfineModel, Ms, NuclearConfig};
use crate::rng::ShotRng;

const LABEL: u64 = 0x4553_5253;

/// Preparation and probe pulse of an ESR scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EsrSettings {
    /// Heralded configuration and repetitions per attempt.
    pub herald: Option<(NuclearConfig, u32)>,
    pub rabi: f64,
    pub duration: f64,
}

impl EsrSettings {
    /// π pulse at the configured spectrum Ω.
    pub fn new(setup: &Setup, herald: Option<(NuclearConfig, u32)>) -> Self {
        let rabi = setup.protocol.spectrum_rabi_for(setup.hyperfine);
        EsrSettings { herald, rabi, duration: PulseParams::pi_duration(rabi) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub frequencies: Vec<f64>,
    /// `P(declared ms = 0)` over accepted shots at each frequency.
    pub p_ms0: Vec<Proportion>,
    pub shots_per_point: usize,
}

impl Spectrum {
    pub fn values(&self) -> Vec<f64> {
        self.p_ms0.iter().map(|p| p.value).collect()
    }

    /// Binomial SEs, floored at the half-count level so that points with
    /// `p ∈ {0, 1}` keep a finite weight.
    pub fn errors(&self) -> Vec<f64> {
        self.p_ms0.iter().map(|p| p.se().max(0.5 / p.n.max(1) as f64)).collect()
    }
}

/// Per frequency: optional herald, A1 pump to `ms = 0`, MW pulse, readout.
/// Shots whose herald fails are discarded.
pub fn esr_spectrum(setup: &Setup, settings: &EsrSettings, frequencies: &[f64], n_shots: usize, seed: u64) -> Result<Spectrum> {
    let p = setup.protocol;
    let herald = settings
        .herald
        .map(|(t, reps)| Herald::new(setup, t, reps, HeraldMode::Target))
        .transpose()?;
    let cfg = setup.readout_config();
    let n = n_shots.max(1);
    let flat = try_run_shots(frequencies.len() * n_shots, seed, LABEL, |i, rng: &mut ShotRng| {
        let freq = frequencies[i as usize / n];
        let mut s = match &herald {
            Some(h) => {
                let o = h.run(setup, Ms::Zero, rng)?;
                if !o.heralded {
                    return Ok(None);
                }
                o.state
            }
            None => unpolarized(setup, Ms::Zero, rng),
        };
        setup.laser(&mut s, &Drive::a1(p.pump_a1_power), p.pump_a1_duration, rng);
        s = mw_pulse(&s, &PulseParams::mw(freq, settings.rabi, settings.duration), setup.hyperfine, rng)?;
        Ok(Some(setup.read(&mut s, cfg.duration, cfg.power, rng) >= cfg.threshold))
    })?;
    let p_ms0 = (0..frequencies.len())
        .map(|f| {
            let chunk = &flat[f * n_shots..(f + 1) * n_shots];
            let acc: Vec<bool> = chunk.iter().flatten().copied().collect();
            Proportion::from_counts(acc.iter().filter(|b| **b).count(), acc.len())
        })
        .collect();
    Ok(Spectrum { frequencies: frequencies.to_vec(), p_ms0, shots_per_point: n_shots })
}

/// Exact `P(declared ms = 0)` of the same sequence.
pub fn exact_esr_spectrum(setup: &Setup, settings: &EsrSettings, frequencies: &[f64]) -> Result<Vec<f64>> {
    let p = setup.protocol;
    let oracle = Oracle::new(setup.rates, setup.hyperfine);
    let v0 = oracle.unpolarized(Ms::Zero);
    let v = match settings.herald {
        Some((t, reps)) => herald_law(&oracle, setup, &Herald::new(setup, t, reps, HeraldMode::Target)?, &v0)?.state,
        None => v0,
    };
    let v = oracle.pump(&Drive::a1(p.pump_a1_power), p.pump_a1_duration).tr_mul(&v);
    let cfg = setup.readout_config();
    let bright = oracle.segment(&Drive::ex(cfg.power), cfg.duration, cfg.threshold as usize).at_least(cfg.threshold as usize);
    frequencies
        .iter()
        .map(|&f| {
            let mw = oracle.mw_matrix(&PulseParams::mw(f, settings.rabi, settings.duration), setup.hyperfine)?;
            Ok(bright.tr_mul(&mw.tr_mul(&v)).sum())
        })
        .collect()
}

/// A fixed line position and whether it belongs only to the target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinePosition {
    pub frequency: f64,
    pub target: bool,
}

/// Distinct lines of `model` (optionally one branch). A line counts as a
/// target line only if every configuration sharing it is `target`.
pub fn line_positions(model: &HyperfineModel, target: Option<NuclearConfig>, branch: Option<i8>) -> Vec<LinePosition> {
    model
        .distinct_lines(branch)
        .into_iter()
        .map(|(frequency, members)| LinePosition {
            frequency,
            target: target.is_some_and(|t| members.iter().all(|m| m.config == t)),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineAmplitude {
    pub frequency: f64,
    pub target: bool,
    /// Dip depth (positive for a reduced `P(ms = 0)`).
    pub amplitude: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub baseline: Value,
    pub lines: Vec<LineAmplitude>,
    /// Target amplitude over total amplitude; `None` when nothing was fitted.
    pub ratio: Option<Value>,
    pub residual_norm: f64,
    pub signal_norm: f64,
}

/// `y = c − Σ a_j exp(−(f − f_j)²/2σ²)` with centres and σ fixed.
pub fn fit_gaussians(frequencies: &[f64], y: &[f64], errors: &[f64], lines: &[LinePosition], sigma: f64) -> Result<GaussianFit> {
    let n = frequencies.len();
    let m = lines.len();
    if y.len() != n || errors.len() != n || m == 0 || !(sigma > 0.0) {
        return Err(Error::Fit("Gaussian fit needs matching data, at least one line and σ > 0".into()));
    }
    if n < m + 1 {
        return Err(Error::InsufficientData(format!("{n} points for {} parameters", m + 1)));
    }
    let mut x = DMatrix::zeros(n, m + 1);
    for i in 0..n {
        x[(i, 0)] = 1.0;
        for (j, l) in lines.iter().enumerate() {
            x[(i, j + 1)] = -(-(frequencies[i] - l.frequency).powi(2) / (2.0 * sigma * sigma)).exp();
        }
    }
    let sv = x.clone().singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if !(smin > 1e-9 * smax) {
        return Err(Error::Fit("degenerate design: line positions are not separable at this σ".into()));
    }
    let weights: Vec<f64> = if errors.iter().all(|&e| e > 0.0) { errors.to_vec() } else { vec![1.0; n] };
    let yv = DVector::from_column_slice(y);
    let (beta, cov) = linear_least_squares(&x, &yv, &weights)?;
    let resid = &yv - &x * &beta;
    let amp: Vec<Value> = (0..m).map(|j| Value { value: beta[j + 1], se: cov[(j + 1, j + 1)].max(0.0).sqrt() }).collect();
    let total: f64 = amp.iter().map(|a| a.value).sum();
    let tgt: f64 = lines.iter().zip(&amp).filter(|(l, _)| l.target).map(|(_, a)| a.value).sum();
    let ratio = (total.abs() > 1e-12).then(|| {
        let r = tgt / total;
        // ∂r/∂a_j = (1[target] − r)/total
        let g = DVector::from_iterator(m, lines.iter().map(|l| (f64::from(u8::from(l.target)) - r) / total));
        let sub = cov.view((1, 1), (m, m));
        Value { value: r, se: (g.transpose() * sub * &g)[(0, 0)].max(0.0).sqrt() }
    });
    let mean = y.iter().sum::<f64>() / n as f64;
    let signal: f64 = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>().sqrt();
    Ok(GaussianFit {
        baseline: Value { value: beta[0], se: cov[(0, 0)].max(0.0).sqrt() },
        lines: lines
            .iter()
            .zip(amp)
            .map(|(l, a)| LineAmplitude { frequency: l.frequency, target: l.target, amplitude: a })
            .collect(),
        ratio,
        residual_norm: resid.norm(),
        signal_norm: signal,
    })
}

/// Grid covering every distinct line of `branch` at `offsets` (in units of
/// the linewidth) plus `n_baseline` points spread across the band.
pub fn line_grid(model: &HyperfineModel, branch: Option<i8>, offsets: &[f64], n_baseline: usize) -> Vec<f64> {
    let lines = model.distinct_lines(branch);
    let s = model.linewidth;
    let mut f: Vec<f64> = lines.iter().flat_map(|(c, _)| offsets.iter().map(move |o| c + o * s)).collect();
    if let (Some(lo), Some(hi)) = (lines.first(), lines.last()) {
        let (a, b) = (lo.0 - 6.0 * s, hi.0 + 6.0 * s);
        f.extend((0..n_baseline).map(|k| a + (b - a) * k as f64 / (n_baseline.max(2) - 1) as f64));
    }
    f.sort_by(f64::total_cmp);
    f.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    f
}
