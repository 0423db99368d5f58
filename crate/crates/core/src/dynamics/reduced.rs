//! Two-pool (bright/dark) model: the bright pool clicks at `R` and is pumped
//! dark at `γ₀`; the dark pool leaks back at `γ_leak`.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use super::exact::{count_distribution_from, propagate_counts, CountDistribution, MarkedChain, Transition};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReducedModel {
    /// Detected click rate of the bright pool (µs⁻¹).
    pub bright_rate: f64,
    pub pump_out: f64,
    pub leak: f64,
}

pub const BRIGHT: usize = 0;
pub const DARK: usize = 1;

impl ReducedModel {
    pub fn chain(&self) -> MarkedChain {
        MarkedChain::new(
            2,
            vec![
                Transition { from: BRIGHT, to: BRIGHT, rate: self.bright_rate, marked: true },
                Transition { from: BRIGHT, to: DARK, rate: self.pump_out, marked: false },
                Transition { from: DARK, to: BRIGHT, rate: self.leak, marked: false },
            ]
            .into_iter()
            .filter(|t| t.rate > 0.0)
            .collect(),
        )
    }

    pub fn exact_counts(&self, start: usize, duration: f64, n_max: usize) -> CountDistribution {
        let mut init = [0.0; 2];
        init[start] = 1.0;
        count_distribution_from(&propagate_counts(&self.chain(), &init, duration, n_max))
    }

    /// Detected count of one Monte Carlo shot.
    pub fn sample_counts<R: Rng + ?Sized>(&self, start: usize, duration: f64, rng: &mut R) -> u32 {
        let mut state = start;
        let mut t = 0.0;
        let mut n = 0;
        loop {
            let total = if state == BRIGHT { self.bright_rate + self.pump_out } else { self.leak };
            if total <= 0.0 {
                return n;
            }
            let w: f64 = Exp1.sample(rng);
            t += w / total;
            if t >= duration {
                return n;
            }
            if state == BRIGHT {
                if rng.random::<f64>() * total < self.bright_rate {
                    n += 1;
                } else {
                    state = DARK;
                }
            } else {
                state = BRIGHT;
            }
        }
    }

    /// `P(0 clicks in T | bright)` without leak: the first click must lose
    /// the race against pump-out.
    pub fn p_zero_bright_closed_form(&self, duration: f64) -> f64 {
        let s = self.bright_rate + self.pump_out;
        (self.pump_out + self.bright_rate * (-s * duration).exp()) / s
    }

    /// Mean clicks from bright without leak: `(R/γ₀)(1 − e^{−γ₀T})`.
    pub fn mean_bright_closed_form(&self, duration: f64) -> f64 {
        if self.pump_out == 0.0 {
            return self.bright_rate * duration;
        }
        self.bright_rate / self.pump_out * (1.0 - (-self.pump_out * duration).exp())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::shot_rng;

    #[test]
    fn exact_matches_closed_form() {
        let m = ReducedModel { bright_rate: 0.74, pump_out: 1.0 / 8.1, leak: 0.0 };
        let d = m.exact_counts(BRIGHT, 100.0, 120);
        assert!((d.probs[0] - m.p_zero_bright_closed_form(100.0)).abs() < 1e-10);
        let mean: f64 = d.probs.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
        assert!((mean - m.mean_bright_closed_form(100.0)).abs() < 1e-8);
    }

    #[test]
    fn dark_without_leak_is_silent() {
        let m = ReducedModel { bright_rate: 0.74, pump_out: 0.1, leak: 0.0 };
        let mut rng = shot_rng(0, 0);
        assert!((0..100).all(|_| m.sample_counts(DARK, 100.0, &mut rng) == 0));
    }
}
