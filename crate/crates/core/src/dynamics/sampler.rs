//! Exact continuous-time Monte Carlo (competing exponentials) over the
//! channel set of a [`RateModel`].

use rand::Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use serde::{Deserialize, Serialize};

use super::rates::{Channel, Drive, RateModel};
use crate::register::{NuclearConfig, RegisterState};

/// One jump of the Markov process.
#[derive(Debug, Clone, Copy)]
pub struct Event {
    pub time: f64,
    pub channel: Channel,
    /// Emitted photon survived detection thinning.
    pub detected: bool,
    pub state: RegisterState,
}

/// Detector parameters used by [`detect`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detector {
    pub eta: f64,
    pub dark_rate: f64,
}

impl From<&RateModel> for Detector {
    fn from(m: &RateModel) -> Self {
        Detector {
            eta: m.eta,
            dark_rate: m.dark_rate,
        }
    }
}

/// Flip each active nucleus independently with its back-action probability.
/// ¹⁴N jumps to one of the two other projections, ¹³C toggles.
pub fn flip_nuclei<R: Rng + ?Sized>(rates: &RateModel, config: NuclearConfig, rng: &mut R) -> NuclearConfig {
    let mut c = config;
    for i in 0..3 {
        let raw = c.raw(i);
        if i > 0 && raw == 0 {
            continue;
        }
        let q = rates.q_nuc_for(i);
        if q > 0.0 && rng.random::<f64>() < q {
            let new = if i == 0 {
                let others: [i8; 2] = match raw {
                    -1 => [0, 1],
                    0 => [-1, 1],
                    _ => [-1, 0],
                };
                others[rng.random_range(0..2)]
            } else {
                -raw
            };
            c = c.with_nucleus(i, new);
        }
    }
    c
}

/// Evolve `state` under `drive` for `duration` µs, reporting every jump.
///
/// Emitted photons are thinned with the detector efficiency inline; dark
/// counts are not generated here (see [`dark_counts`]). A state with zero
/// total outgoing rate holds until the end of the segment.
pub fn evolve<R: Rng + ?Sized>(
    rates: &RateModel,
    state: &mut RegisterState,
    drive: &Drive,
    duration: f64,
    rng: &mut R,
    mut on_event: impl FnMut(&Event),
) {
    let mut t = 0.0;
    loop {
        let channels = rates.channels(state.electron, state.charge_ok, drive);
        let total = channels.total();
        if total <= 0.0 {
            break;
        }
        let wait: f64 = Exp1.sample(rng);
        t += wait / total;
        if t >= duration {
            break;
        }
        let mut pick = rng.random::<f64>() * total;
        let mut chosen = None;
        for (c, r) in channels.iter() {
            chosen = Some(c);
            if pick < r {
                break;
            }
            pick -= r;
        }
        let channel = chosen.expect("non-empty channel set");
        let from = state.electron;
        state.electron = rates.outcomes(channel, from).pick(rng.random());
        let mut detected = false;
        if channel.emits_photon() {
            state.nuclei = flip_nuclei(rates, state.nuclei, rng);
            detected = rng.random::<f64>() < rates.eta;
        }
        on_event(&Event {
            time: t,
            channel,
            detected,
            state: *state,
        });
    }
}

/// Let excited and singlet population decay with all lasers off. Photons
/// emitted here fall outside any counting window.
pub fn relax<R: Rng + ?Sized>(rates: &RateModel, state: &mut RegisterState, rng: &mut R) {
    if !state.electron.is_ground() {
        evolve(rates, state, &Drive::none(), f64::INFINITY, rng, |_| {});
    }
}

/// Homogeneous Poisson dark counts on `[0, duration)`, sorted.
pub fn dark_counts<R: Rng + ?Sized>(dark_rate: f64, duration: f64, rng: &mut R) -> Vec<f64> {
    let mean = dark_rate * duration;
    if mean <= 0.0 {
        return Vec::new();
    }
    let n = Poisson::new(mean).expect("positive mean").sample(rng) as usize;
    let mut out: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * duration).collect();
    out.sort_by(f64::total_cmp);
    out
}

/// Binomial thinning of `emissions` with efficiency `eta` plus dark counts
/// on `[0, duration)`. Output is sorted.
pub fn detect<R: Rng + ?Sized>(emissions: &[f64], detector: Detector, duration: f64, rng: &mut R) -> Vec<f64> {
    let mut out: Vec<f64> = emissions
        .iter()
        .copied()
        .filter(|_| detector.eta >= 1.0 || rng.random::<f64>() < detector.eta)
        .collect();
    if detector.dark_rate > 0.0 {
        out.extend(dark_counts(detector.dark_rate, duration, rng));
        out.sort_by(f64::total_cmp);
    }
    out
}

/// Record of one simulated shot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub duration: f64,
    pub emitted: Vec<f64>,
    pub detected: Vec<f64>,
    pub path: Vec<(f64, RegisterState)>,
    pub final_state: RegisterState,
}

/// Full trajectory of one shot: emissions, detections (thinned emissions
/// plus dark counts) and the jump path.
pub fn sample_trajectory<R: Rng + ?Sized>(
    rates: &RateModel,
    state0: RegisterState,
    drive: &Drive,
    duration: f64,
    rng: &mut R,
) -> Trajectory {
    let mut state = state0;
    let mut emitted = Vec::new();
    let mut detected = Vec::new();
    let mut path = vec![(0.0, state0)];
    evolve(rates, &mut state, drive, duration, rng, |e| {
        if e.channel.emits_photon() {
            emitted.push(e.time);
            if e.detected {
                detected.push(e.time);
            }
        }
        path.push((e.time, e.state));
    });
    if rates.dark_rate > 0.0 {
        detected.extend(dark_counts(rates.dark_rate, duration, rng));
        detected.sort_by(f64::total_cmp);
    }
    Trajectory {
        duration,
        emitted,
        detected,
        path,
        final_state: state,
    }
}

/// Summary of an illuminated segment used by the protocol layer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SegmentCounts {
    pub detected: u32,
    pub emitted: u32,
    pub excitations: u32,
}

/// Evolve and count; adds dark counts to `detected`.
pub fn illuminate<R: Rng + ?Sized>(
    rates: &RateModel,
    state: &mut RegisterState,
    drive: &Drive,
    duration: f64,
    rng: &mut R,
) -> SegmentCounts {
    let mut c = SegmentCounts::default();
    if duration <= 0.0 {
        return c;
    }
    evolve(rates, state, drive, duration, rng, |e| {
        if e.channel.emits_photon() {
            c.emitted += 1;
            c.detected += e.detected as u32;
        }
        if e.channel.is_optical_excitation() {
            c.excitations += 1;
        }
    });
    if rates.dark_rate > 0.0 && !drive.is_dark() {
        c.detected += dark_counts(rates.dark_rate, duration, rng).len() as u32;
    }
    c
}

/// Evolve and return detection timestamps (including dark counts).
pub fn illuminate_times<R: Rng + ?Sized>(
    rates: &RateModel,
    state: &mut RegisterState,
    drive: &Drive,
    duration: f64,
    rng: &mut R,
) -> Vec<f64> {
    let mut times = Vec::new();
    evolve(rates, state, drive, duration, rng, |e| {
        if e.detected {
            times.push(e.time);
        }
    });
    if rates.dark_rate > 0.0 && !drive.is_dark() {
        times.extend(dark_counts(rates.dark_rate, duration, rng));
        times.sort_by(f64::total_cmp);
    }
    times
}
