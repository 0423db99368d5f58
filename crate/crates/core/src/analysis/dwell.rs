//! Dwell times of a thresholded jump trace and exponential KS tests.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::fit::Value;
use crate::error::{Error, Result};
use crate::rng::labelled_rng;

const JITTER_LABEL: u64 = 0x4457_454c;
pub const MIN_DWELLS: usize = 20;

/// Uncensored dwell lengths in bins, split by inferred state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dwells {
    pub bright: Vec<u32>,
    pub dark: Vec<u32>,
}

/// Run lengths of `bright`, dropping the first and last runs (their true
/// lengths are unknown).
pub fn segment_dwells(bright: &[bool]) -> Dwells {
    let mut runs: Vec<(bool, u32)> = Vec::new();
    for &b in bright {
        match runs.last_mut() {
            Some((s, n)) if *s == b => *n += 1,
            _ => runs.push((b, 1)),
        }
    }
    let inner = if runs.len() > 2 { &runs[1..runs.len() - 1] } else { &[][..] };
    Dwells {
        bright: inner.iter().filter(|r| r.0).map(|r| r.1).collect(),
        dark: inner.iter().filter(|r| !r.0).map(|r| r.1).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DwellFit {
    pub n: usize,
    /// Mean dwell (µs), from bin counts minus half a bin.
    pub mean: Value,
    pub ks_statistic: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DwellStatistics {
    pub bin: f64,
    pub bright: Option<DwellFit>,
    pub dark: Option<DwellFit>,
}

/// `Q_KS(λ) = 2 Σ (−1)^(j−1) e^(−2j²λ²)`.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for j in 1..=100 {
        let term = (-2.0 * (j * j) as f64 * lambda * lambda).exp();
        s += if j % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// One-sample KS statistic against `Exp(mean)`.
pub fn ks_exponential(samples: &[f64], mean: f64) -> f64 {
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = 1.0 - (-v / mean).exp();
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Mean and exponential KS test of dwells of one kind. Bin-discretized
/// lengths `k` are spread to `(k − U)·bin` with `U ~ U(0,1)` from a fixed
/// stream, so the result is deterministic.
pub fn fit_dwells(lengths: &[u32], bin: f64, stream: u64) -> Option<DwellFit> {
    let n = lengths.len();
    if n < 2 {
        return None;
    }
    let mut rng = labelled_rng(0, JITTER_LABEL, stream);
    let x: Vec<f64> = lengths.iter().map(|&k| (k as f64 - rng.random::<f64>()) * bin).collect();
    let m = lengths.iter().map(|&k| k as f64 - 0.5).sum::<f64>() * bin / n as f64;
    let var = lengths.iter().map(|&k| ((k as f64 - 0.5) * bin - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    let jitter_mean = x.iter().sum::<f64>() / n as f64;
    let d = ks_exponential(&x, jitter_mean);
    let sn = (n as f64).sqrt();
    Some(DwellFit {
        n,
        mean: Value { value: m, se: (var / n as f64).sqrt() },
        ks_statistic: d,
        p_value: kolmogorov_survival((sn + 0.12 + 0.11 / sn) * d),
    })
}

/// Dwell statistics of an inferred bright/dark trace with bins of `bin` µs.
pub fn dwell_statistics(bright: &[bool], bin: f64) -> Result<DwellStatistics> {
    let d = segment_dwells(bright);
    let total = d.bright.len() + d.dark.len();
    if total < MIN_DWELLS {
        return Err(Error::InsufficientData(format!("{total} uncensored dwells, need at least {MIN_DWELLS}")));
    }
    Ok(DwellStatistics { bin, bright: fit_dwells(&d.bright, bin, 0), dark: fit_dwells(&d.dark, bin, 1) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn censored_runs_are_dropped() {
        let t = [true, true, false, true, true, true, false, false, true];
        let d = segment_dwells(&t);
        assert_eq!(d.bright, [3]);
        assert_eq!(d.dark, [1, 2]);
        assert!(dwell_statistics(&[true; 100], 5.0).is_err());
    }

    #[test]
    fn kolmogorov_tail_values() {
        assert!((kolmogorov_survival(1.36) - 0.0494).abs() < 1e-3);
        assert!((kolmogorov_survival(1.63) - 0.0098).abs() < 1e-3);
    }
}
