//! Readout fidelity estimates and window/threshold/division searches.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::exact_count_distribution;
use crate::dynamics::sampler::illuminate_times;
use crate::dynamics::Drive;
use crate::error::{Error, Result};
use crate::protocols::experiments::Proportion;
use crate::protocols::nuclear::unpolarized;
use crate::protocols::oracle::two_segment_joint;
use crate::protocols::{run_shots, Declared, Setup};
use crate::register::{Ms, RegisterState};
use crate::rng::ShotRng;

const LABEL_BRIGHT: u64 = 0x5749_4e42;
const LABEL_DARK: u64 = 0x5749_4e44;

/// Settings picked by an optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Choice {
    pub duration: f64,
    pub threshold: u32,
    pub division: Option<f64>,
}

/// Probability with its 2-SE half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub value: f64,
    pub half_width: f64,
}

impl From<Proportion> for Interval {
    fn from(p: Proportion) -> Self {
        Interval { value: p.value, half_width: p.half_width }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub f_ms0: Interval,
    pub f_pm1: Interval,
    /// Half-width combines the two independent binomial SEs.
    pub f_avg: Interval,
    pub n_shots: usize,
    pub optimizer: Option<Choice>,
}

impl FidelityReport {
    fn from_correct(bright_ok: usize, n_bright: usize, dark_ok: usize, n_dark: usize) -> Self {
        let b = Proportion::from_counts(bright_ok, n_bright);
        let d = Proportion::from_counts(dark_ok, n_dark);
        FidelityReport {
            f_ms0: b.into(),
            f_pm1: d.into(),
            f_avg: Interval {
                value: 0.5 * (b.value + d.value),
                half_width: 0.5 * (b.half_width.powi(2) + d.half_width.powi(2)).sqrt(),
            },
            n_shots: n_bright + n_dark,
            optimizer: None,
        }
    }
}

/// Fidelity of declared outcomes from bright (`ms = 0`) and dark
/// (`ms = ±1`) preparations.
pub fn estimate_fidelity(bright: &[Declared], dark: &[Declared]) -> Result<FidelityReport> {
    if bright.is_empty() || dark.is_empty() {
        return Err(Error::Estimation("fidelity needs shots from both preparations".into()));
    }
    let b = bright.iter().filter(|d| **d == Declared::Ms0).count();
    let k = dark.iter().filter(|d| **d == Declared::Pm1).count();
    Ok(FidelityReport::from_correct(b, bright.len(), k, dark.len()))
}

/// Sorted detection timestamps of one shot.
pub type Timestamps = Vec<f64>;

/// Detection timestamps of readout shots, bright and dark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimestampRecords {
    pub duration: f64,
    pub bright: Vec<Timestamps>,
    pub dark: Vec<Timestamps>,
}

fn count_in(ts: &[f64], from: f64, to: f64) -> u32 {
    (ts.partition_point(|&t| t < to) - ts.partition_point(|&t| t < from)) as u32
}

/// `n_shots` per preparation of continuous readout at the configured power.
/// Dark shots start in `ms = −1` or `+1` with equal probability.
pub fn simulate_timestamps(setup: &Setup, duration: f64, n_shots: usize, seed: u64) -> TimestampRecords {
    let drive = Drive::ex(setup.protocol.readout_power);
    let shoot = |ms: Option<Ms>, label| {
        run_shots(n_shots, seed, label, |_, rng: &mut ShotRng| {
            let ms = ms.unwrap_or(if rng.random::<bool>() { Ms::Minus } else { Ms::Plus });
            let mut s = unpolarized(setup, ms, rng);
            illuminate_times(setup.rates, &mut s, &drive, duration, rng)
        })
    };
    TimestampRecords { duration, bright: shoot(Some(Ms::Zero), LABEL_BRIGHT), dark: shoot(None, LABEL_DARK) }
}

fn check_grid(name: &str, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Config(format!("{name} grid is empty")));
    }
    Ok(())
}

/// First strictly better candidate wins, so with grids scanned in ascending
/// order ties go to the smallest duration, then the smallest threshold.
fn best_by<F: Fn(f64, u32) -> f64>(durations: &[f64], thresholds: &[u32], f: F) -> (f64, u32, f64) {
    let mut d = durations.to_vec();
    d.sort_by(f64::total_cmp);
    let mut t = thresholds.to_vec();
    t.sort_unstable();
    let mut best = (d[0], t[0], f64::NEG_INFINITY);
    for &dur in &d {
        for &thr in &t {
            let v = f(dur, thr);
            if v > best.2 {
                best = (dur, thr, v);
            }
        }
    }
    best
}

/// Exhaustive search for the `(duration, threshold)` maximizing `F_avg`.
pub fn optimize_window(records: &TimestampRecords, durations: &[f64], thresholds: &[u32]) -> Result<FidelityReport> {
    check_grid("duration", durations.len())?;
    check_grid("threshold", thresholds.len())?;
    if durations.iter().any(|&d| d > records.duration + 1e-9) {
        return Err(Error::Config(format!("records cover only {} µs", records.duration)));
    }
    let tally = |d: f64, t: u32| {
        let b = records.bright.iter().filter(|ts| count_in(ts, 0.0, d) >= t).count();
        let k = records.dark.iter().filter(|ts| count_in(ts, 0.0, d) < t).count();
        (b, k)
    };
    let (nb, nd) = (records.bright.len(), records.dark.len());
    let (d, t, _) = best_by(durations, thresholds, |d, t| {
        let (b, k) = tally(d, t);
        0.5 * (b as f64 / nb as f64 + k as f64 / nd as f64)
    });
    let (b, k) = tally(d, t);
    let mut r = FidelityReport::from_correct(b, nb, k, nd);
    r.optimizer = Some(Choice { duration: d, threshold: t, division: None });
    Ok(r)
}

/// Exact `(F_ms0, F_pm1)` of a thresholded window from clean preparations.
pub fn exact_window_fidelity(setup: &Setup, duration: f64, threshold: u32) -> Result<(f64, f64)> {
    let config = setup.hyperfine.configs()[0];
    let drive = Drive::ex(setup.protocol.readout_power);
    let below = |ms| -> Result<f64> {
        let d = exact_count_distribution(
            setup.rates,
            setup.hyperfine.active_nuclei,
            &RegisterState::ground(ms, config),
            &drive,
            duration,
            threshold as usize,
        )?;
        Ok(d.probs[..threshold as usize].iter().sum())
    };
    let f0 = 1.0 - below(Ms::Zero)?;
    let f1 = 0.5 * (below(Ms::Minus)? + below(Ms::Plus)?);
    Ok((f0, f1))
}

/// Oracle counterpart of [`optimize_window`]: `(duration, threshold, F_avg)`.
pub fn optimize_window_exact(setup: &Setup, durations: &[f64], thresholds: &[u32]) -> Result<(f64, u32, f64)> {
    check_grid("duration", durations.len())?;
    check_grid("threshold", thresholds.len())?;
    let mut table = std::collections::HashMap::new();
    for &d in durations {
        for &t in thresholds {
            let (f0, f1) = exact_window_fidelity(setup, d, t)?;
            table.insert((d.to_bits(), t), 0.5 * (f0 + f1));
        }
    }
    Ok(best_by(durations, thresholds, |d, t| table[&(d.to_bits(), t)]))
}

/// Result of the two-segment division search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivisionReport {
    pub division: f64,
    pub total: f64,
    pub threshold: u32,
    pub r1: FidelityReport,
    pub r2: FidelityReport,
    /// Fraction of all shots where both segments declare the same state.
    pub p_identical: Interval,
}

/// Split each shot's window at every candidate division and keep the one
/// maximizing `min(F_R1, F_R2)`; ties go to the smallest division.
pub fn optimize_division(records: &TimestampRecords, divisions: &[f64], threshold: u32) -> Result<DivisionReport> {
    check_grid("division", divisions.len())?;
    let total = records.duration;
    if divisions.iter().any(|&d| !(0.0..=total).contains(&d)) {
        return Err(Error::Config(format!("divisions must lie in [0, {total}]")));
    }
    let eval = |div: f64| {
        let split = |ts: &Timestamps| (count_in(ts, 0.0, div) >= threshold, count_in(ts, div, f64::INFINITY) >= threshold);
        let (mut b1, mut b2, mut k1, mut k2, mut same) = (0, 0, 0, 0, 0);
        for (a, b) in records.bright.iter().map(split) {
            b1 += a as usize;
            b2 += b as usize;
            same += (a == b) as usize;
        }
        for (a, b) in records.dark.iter().map(split) {
            k1 += !a as usize;
            k2 += !b as usize;
            same += (a == b) as usize;
        }
        let (nb, nd) = (records.bright.len(), records.dark.len());
        let r1 = FidelityReport::from_correct(b1, nb, k1, nd);
        let r2 = FidelityReport::from_correct(b2, nb, k2, nd);
        (r1, r2, Proportion::from_counts(same, nb + nd))
    };
    let mut sorted = divisions.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut best: Option<(f64, f64)> = None;
    for &d in &sorted {
        let (r1, r2, _) = eval(d);
        let score = r1.f_avg.value.min(r2.f_avg.value);
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((d, score));
        }
    }
    let division = best.expect("non-empty grid").0;
    let (mut r1, mut r2, same) = eval(division);
    let choice = Choice { duration: total, threshold, division: Some(division) };
    r1.optimizer = Some(choice);
    r2.optimizer = Some(choice);
    Ok(DivisionReport { division, total, threshold, r1, r2, p_identical: same.into() })
}

/// Exact `(F_R1, F_R2, P(identical))` of a split readout.
pub fn exact_division(setup: &Setup, division: f64, total: f64, threshold: u32) -> Result<(f64, f64, f64)> {
    let config = setup.hyperfine.configs()[0];
    let joint = |ms| {
        two_segment_joint(setup.rates, setup.hyperfine, &RegisterState::ground(ms, config), division, total, setup.protocol.readout_power, threshold)
    };
    let jb = joint(Ms::Zero)?;
    let (jm, jp) = (joint(Ms::Minus)?, joint(Ms::Plus)?);
    let mut jd = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            jd[i][j] = 0.5 * (jm[i][j] + jp[i][j]);
        }
    }
    let f1 = 0.5 * (jb[0][0] + jb[0][1] + jd[1][0] + jd[1][1]);
    let f2 = 0.5 * (jb[0][0] + jb[1][0] + jd[0][1] + jd[1][1]);
    let same = 0.5 * (jb[0][0] + jb[1][1] + jd[0][0] + jd[1][1]);
    Ok((f1, f2, same))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_correct_lists() {
        let r = estimate_fidelity(&[Declared::Ms0; 5], &[Declared::Pm1; 7]).unwrap();
        assert_eq!(r.f_avg.value, 1.0);
        assert_eq!(r.f_avg.half_width, 0.0);
        assert_eq!(r.n_shots, 12);
        assert!(estimate_fidelity(&[], &[Declared::Pm1]).is_err());
    }

    #[test]
    fn single_point_grid() {
        let rec = TimestampRecords { duration: 10.0, bright: vec![vec![1.0, 2.0]], dark: vec![vec![]] };
        let r = optimize_window(&rec, &[5.0], &[2]).unwrap();
        let c = r.optimizer.unwrap();
        assert_eq!((c.duration, c.threshold), (5.0, 2));
        assert_eq!(r.f_avg.value, 1.0);
    }

    #[test]
    fn ties_prefer_small_settings() {
        let rec = TimestampRecords { duration: 10.0, bright: vec![vec![0.5]], dark: vec![vec![]] };
        let r = optimize_window(&rec, &[8.0, 2.0, 4.0], &[1, 2]).unwrap();
        let c = r.optimizer.unwrap();
        assert_eq!((c.duration, c.threshold), (2.0, 1));
    }
}
