//! Exact counting-process oracle.
//!
//! The register's Markov jump process is rebuilt as a [`MarkedChain`] whose
//! transitions carry a detection mark. The joint law of (final state,
//! detected count) is propagated by uniformization with an explicit
//! overflow bin, so every probability is accounted for.

use nalgebra::{DMatrix, DVector};

use super::rates::{Drive, RateModel};
use crate::error::{Error, Result};
use crate::register::{ActiveNuclei, ElectronLevel, Ms, NuclearConfig, RegisterState};

/// Full state space (electron level × nuclear configuration). Level is the
/// outer index, so the first `3·F` indices coincide with
/// [`GroundSpace`](crate::register::GroundSpace).
#[derive(Debug, Clone)]
pub struct FullSpace {
    pub active: ActiveNuclei,
    configs: Vec<NuclearConfig>,
}

impl FullSpace {
    pub fn new(active: ActiveNuclei) -> Self {
        FullSpace {
            active,
            configs: active.configs(),
        }
    }

    pub fn len(&self) -> usize {
        6 * self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn n_configs(&self) -> usize {
        self.configs.len()
    }

    pub fn n_ground(&self) -> usize {
        3 * self.configs.len()
    }

    pub fn configs(&self) -> &[NuclearConfig] {
        &self.configs
    }

    pub fn index(&self, level: ElectronLevel, config: NuclearConfig) -> Option<usize> {
        Some(level.index() * self.configs.len() + self.active.config_index(config)?)
    }

    pub fn level(&self, i: usize) -> ElectronLevel {
        ElectronLevel::from_index(i / self.configs.len())
    }

    pub fn config(&self, i: usize) -> NuclearConfig {
        self.configs[i % self.configs.len()]
    }

    pub fn state(&self, i: usize) -> RegisterState {
        RegisterState {
            electron: self.level(i),
            nuclei: self.config(i),
            charge_ok: true,
        }
    }

    /// Point mass on `state`.
    pub fn point(&self, state: &RegisterState) -> Result<Vec<f64>> {
        let i = self
            .index(state.electron, state.nuclei)
            .ok_or_else(|| Error::Config(format!("nuclear configuration {} not in register", state.nuclei)))?;
        let mut v = vec![0.0; self.len()];
        v[i] = 1.0;
        Ok(v)
    }
}

/// Law of the nuclear configuration after one radiative decay.
pub fn nuclear_flip_law(rates: &RateModel, space: &FullSpace, config: NuclearConfig) -> Vec<(usize, f64)> {
    let mut law: Vec<(NuclearConfig, f64)> = vec![(config, 1.0)];
    for i in 0..space.active.get() {
        let q = rates.q_nuc_for(i);
        if q <= 0.0 {
            continue;
        }
        let mut next = Vec::with_capacity(law.len() * 3);
        for &(c, p) in &law {
            let raw = c.raw(i);
            next.push((c, p * (1.0 - q)));
            if i == 0 {
                for other in [-1i8, 0, 1].into_iter().filter(|&v| v != raw) {
                    next.push((c.with_nucleus(0, other), p * q / 2.0));
                }
            } else {
                next.push((c.with_nucleus(i, -raw), p * q));
            }
        }
        law = next;
    }
    let nc = space.n_configs();
    let mut out: Vec<(usize, f64)> = Vec::new();
    for (c, p) in law {
        let idx = space.active.config_index(c).expect("flip stays in register") % nc;
        match out.iter_mut().find(|(j, _)| *j == idx) {
            Some(e) => e.1 += p,
            None => out.push((idx, p)),
        }
    }
    out.retain(|&(_, p)| p > 0.0);
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub from: usize,
    pub to: usize,
    pub rate: f64,
    /// Produces a detector click.
    pub marked: bool,
}

/// Finite Markov chain with detection-marked transitions. Self-loops are
/// allowed and only matter when marked (dark counts).
#[derive(Debug, Clone)]
pub struct MarkedChain {
    pub n: usize,
    pub transitions: Vec<Transition>,
    /// Total outgoing rate per state, self-loops included.
    pub exit: Vec<f64>,
}

impl MarkedChain {
    pub fn new(n: usize, transitions: Vec<Transition>) -> Self {
        let mut exit = vec![0.0; n];
        for t in &transitions {
            exit[t.from] += t.rate;
        }
        MarkedChain { n, transitions, exit }
    }

    /// Register chain under `drive`. Radiative decays split into detected
    /// (`η`) and undetected branches; dark counts are marked self-loops
    /// present whenever a laser is on.
    pub fn register(rates: &RateModel, space: &FullSpace, drive: &Drive, charge_ok: bool) -> Self {
        let nc = space.n_configs();
        let mut tr = Vec::new();
        for i in 0..space.len() {
            let level = space.level(i);
            let cfg = space.config(i);
            for (ch, rate) in rates.channels(level, charge_ok, drive).iter() {
                for (to_level, p) in rates.outcomes(ch, level).iter() {
                    let base = to_level.index() * nc;
                    if ch.emits_photon() {
                        for (c2, pn) in nuclear_flip_law(rates, space, cfg) {
                            let r = rate * p * pn;
                            let to = base + c2;
                            tr.push(Transition { from: i, to, rate: r * rates.eta, marked: true });
                            if rates.eta < 1.0 {
                                tr.push(Transition { from: i, to, rate: r * (1.0 - rates.eta), marked: false });
                            }
                        }
                    } else {
                        let to = base + i % nc;
                        tr.push(Transition { from: i, to, rate: rate * p, marked: false });
                    }
                }
            }
            if rates.dark_rate > 0.0 && !drive.is_dark() {
                tr.push(Transition { from: i, to: i, rate: rates.dark_rate, marked: true });
            }
        }
        tr.retain(|t| t.rate > 0.0);
        MarkedChain::new(space.len(), tr)
    }

    /// Dense generator `Q` (marks ignored, self-loops cancel).
    pub fn generator(&self) -> DMatrix<f64> {
        let mut q = DMatrix::zeros(self.n, self.n);
        for t in &self.transitions {
            if t.from != t.to {
                q[(t.from, t.to)] += t.rate;
                q[(t.from, t.from)] -= t.rate;
            }
        }
        q
    }

    fn reachable(&self, init: &[f64]) -> Vec<bool> {
        let mut seen: Vec<bool> = init.iter().map(|&p| p > 0.0).collect();
        let mut stack: Vec<usize> = (0..self.n).filter(|&i| seen[i]).collect();
        let mut adj = vec![Vec::new(); self.n];
        for t in &self.transitions {
            adj[t.from].push(t.to);
        }
        while let Some(i) = stack.pop() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen
    }
}

/// Joint law of (detected count, final state) after a segment.
#[derive(Debug, Clone)]
pub struct CountedLaw {
    /// `by_count[c][state]` for `c = 0..=n_max`.
    pub by_count: Vec<Vec<f64>>,
    /// Mass with more than `n_max` counts, per final state.
    pub overflow: Vec<f64>,
    /// Poisson tail dropped by the uniformization truncation.
    pub truncation: f64,
}

impl CountedLaw {
    pub fn count_marginal(&self) -> Vec<f64> {
        self.by_count.iter().map(|v| v.iter().sum()).collect()
    }

    pub fn state_marginal(&self) -> Vec<f64> {
        let mut m = self.overflow.clone();
        for v in &self.by_count {
            for (a, b) in m.iter_mut().zip(v) {
                *a += b;
            }
        }
        m
    }

    /// Probability not represented in `by_count`.
    pub fn remainder(&self) -> f64 {
        self.overflow.iter().sum::<f64>() + self.truncation
    }
}

const POISSON_TAIL: f64 = 1e-13;

/// Propagate `init` for `duration` while tracking detected counts up to
/// `n_max` (uniformization; the Poisson series is summed until its tail
/// falls below 1e-13).
pub fn propagate_counts(chain: &MarkedChain, init: &[f64], duration: f64, n_max: usize) -> CountedLaw {
    let n = chain.n;
    let bins = n_max + 2;
    let mut out = CountedLaw {
        by_count: vec![vec![0.0; n]; n_max + 1],
        overflow: vec![0.0; n],
        truncation: 0.0,
    };
    let reach = chain.reachable(init);
    let lambda = (0..n).filter(|&i| reach[i]).map(|i| chain.exit[i]).fold(0.0, f64::max);
    if duration <= 0.0 || lambda <= 0.0 {
        out.by_count[0] = init.to_vec();
        return out;
    }
    let lt = lambda * duration;
    let diag: Vec<f64> = chain.exit.iter().map(|e| 1.0 - e / lambda).collect();
    let steps: Vec<(usize, usize, f64, bool)> = chain
        .transitions
        .iter()
        .filter(|t| reach[t.from])
        .map(|t| (t.from, t.to, t.rate / lambda, t.marked))
        .collect();

    let mut v = vec![0.0; bins * n];
    v[..n].copy_from_slice(init);
    let mut next = vec![0.0; bins * n];
    let mut acc = vec![0.0; bins * n];
    let mut log_w = -lt;
    let mut cum = 0.0;
    let max_terms = (lt + 12.0 * lt.sqrt() + 60.0) as usize;
    let mut top = 0usize; // highest occupied count bin
    for j in 0..=max_terms {
        if j > 0 {
            log_w += lt.ln() - (j as f64).ln();
        }
        let w = log_w.exp();
        if w > 0.0 {
            for (a, b) in acc[..(top + 1) * n].iter_mut().zip(&v[..(top + 1) * n]) {
                *a += w * b;
            }
            cum += w;
        }
        if j as f64 > lt && 1.0 - cum < POISSON_TAIL {
            break;
        }
        let new_top = (top + 1).min(bins - 1);
        next[..(new_top + 1) * n].iter_mut().for_each(|x| *x = 0.0);
        for c in 0..=top {
            let src = &v[c * n..(c + 1) * n];
            let base = c * n;
            for i in 0..n {
                next[base + i] += src[i] * diag[i];
            }
            let up = (c + 1).min(bins - 1) * n;
            for &(from, to, p, marked) in &steps {
                let m = src[from] * p;
                if marked {
                    next[up + to] += m;
                } else {
                    next[base + to] += m;
                }
            }
        }
        std::mem::swap(&mut v, &mut next);
        top = new_top;
    }
    out.truncation = (1.0 - cum).max(0.0);
    for c in 0..=n_max {
        out.by_count[c].copy_from_slice(&acc[c * n..(c + 1) * n]);
    }
    out.overflow.copy_from_slice(&acc[(n_max + 1) * n..(n_max + 2) * n]);
    out
}

/// State distribution after `duration` (counts ignored).
pub fn propagate(chain: &MarkedChain, init: &[f64], duration: f64) -> Vec<f64> {
    let unmarked = MarkedChain::new(
        chain.n,
        chain
            .transitions
            .iter()
            .filter(|t| t.from != t.to)
            .map(|t| Transition { marked: false, ..*t })
            .collect(),
    );
    propagate_counts(&unmarked, init, duration, 0).state_marginal()
}

/// Long-time limit of the chain started from `init`: mass is absorbed into
/// the closed classes it can reach and spreads there by each class's
/// stationary law.
pub fn steady_state(chain: &MarkedChain, init: &[f64]) -> Result<Vec<f64>> {
    let n = chain.n;
    let reach: Vec<Vec<bool>> = (0..n)
        .map(|i| {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            chain.reachable(&e)
        })
        .collect();
    let recurrent: Vec<bool> = (0..n).map(|i| (0..n).all(|j| !reach[i][j] || reach[j][i])).collect();
    let from_init = chain.reachable(init);
    let q = chain.generator();
    let singular = || Error::Estimation("singular generator restriction".into());

    // mass entering each recurrent state
    let transient: Vec<usize> = (0..n).filter(|&i| from_init[i] && !recurrent[i]).collect();
    let mut entry: Vec<f64> = (0..n).map(|i| if recurrent[i] { init[i] } else { 0.0 }).collect();
    if !transient.is_empty() {
        let k = transient.len();
        let qtt = DMatrix::from_fn(k, k, |a, b| -q[(transient[a], transient[b])]);
        let x0 = DVector::from_iterator(k, transient.iter().map(|&i| init[i]));
        let occ = qtt.transpose().lu().solve(&x0).ok_or_else(singular)?;
        for j in (0..n).filter(|&j| recurrent[j]) {
            entry[j] += transient.iter().zip(occ.iter()).map(|(&i, o)| o * q[(i, j)]).sum::<f64>();
        }
    }

    let mut pi = vec![0.0; n];
    let mut done = vec![false; n];
    for r in 0..n {
        if !recurrent[r] || done[r] || !from_init[r] {
            continue;
        }
        let class: Vec<usize> = (0..n).filter(|&j| reach[r][j]).collect();
        let mass: f64 = class.iter().map(|&j| entry[j]).sum();
        class.iter().for_each(|&j| done[j] = true);
        let k = class.len();
        let mut a = DMatrix::from_fn(k, k, |row, col| q[(class[col], class[row])]);
        for j in 0..k {
            a[(k - 1, j)] = 1.0;
        }
        let mut b = DVector::zeros(k);
        b[k - 1] = 1.0;
        let x = a.lu().solve(&b).ok_or_else(singular)?;
        for (p, &i) in x.iter().zip(&class) {
            pi[i] = mass * p.max(0.0);
        }
    }
    Ok(pi)
}

/// `n × 3F` matrix mapping any full state to the ground distribution reached
/// after all lasers switch off. Ground rows are the identity.
pub fn relaxation_matrix(rates: &RateModel, space: &FullSpace) -> DMatrix<f64> {
    let n = space.len();
    let g = space.n_ground();
    let q = MarkedChain::register(rates, space, &Drive::none(), true).generator();
    let t = n - g;
    let qtt = q.view((g, g), (t, t)).into_owned();
    let qta = q.view((g, 0), (t, g)).into_owned();
    let absorb = (-qtt).lu().solve(&qta).expect("excited manifold drains to ground");
    let mut m = DMatrix::zeros(n, g);
    for i in 0..g {
        m[(i, i)] = 1.0;
    }
    m.view_mut((g, 0), (t, g)).copy_from(&absorb);
    m
}

/// Detected-count distribution over `0..=n_max`.
#[derive(Debug, Clone)]
pub struct CountDistribution {
    pub probs: Vec<f64>,
    /// `P(count > n_max)` plus truncation loss.
    pub remainder: f64,
    pub warning: Option<String>,
}

impl CountDistribution {
    pub fn mean_lower_bound(&self) -> f64 {
        self.probs.iter().enumerate().map(|(k, p)| k as f64 * p).sum()
    }

    pub fn cdf(&self) -> Vec<f64> {
        self.probs
            .iter()
            .scan(0.0, |s, p| {
                *s += p;
                Some(*s)
            })
            .collect()
    }
}

pub const REMAINDER_WARNING: f64 = 1e-6;

pub fn count_distribution_from(law: &CountedLaw) -> CountDistribution {
    let remainder = law.remainder();
    let warning = (remainder > REMAINDER_WARNING)
        .then(|| format!("count distribution truncated: remainder {remainder:.3e} beyond n_max"));
    CountDistribution {
        probs: law.count_marginal(),
        remainder,
        warning,
    }
}

/// Exact law of detected photons during one illuminated segment.
pub fn exact_count_distribution(
    rates: &RateModel,
    active: ActiveNuclei,
    state0: &RegisterState,
    drive: &Drive,
    duration: f64,
    n_max: usize,
) -> Result<CountDistribution> {
    let space = FullSpace::new(active);
    let chain = MarkedChain::register(rates, &space, drive, state0.charge_ok);
    let init = space.point(state0)?;
    Ok(count_distribution_from(&propagate_counts(&chain, &init, duration, n_max)))
}

/// Exact mean detected count during a segment (linear ODE for the expected
/// counting rate, integrated by uniformization).
pub fn exact_mean_counts(rates: &RateModel, active: ActiveNuclei, state0: &RegisterState, drive: &Drive, duration: f64) -> Result<f64> {
    // E[N(T)] = ∫ p(t)·m dt with m the marked exit rate; integrate via the
    // uniformized series: ∫0^T Pois(j; Λt) dt = (1/Λ)·P(Pois(ΛT) > j).
    let space = FullSpace::new(active);
    let chain = MarkedChain::register(rates, &space, drive, state0.charge_ok);
    let init = space.point(state0)?;
    let mut marked_rate = vec![0.0; chain.n];
    for t in chain.transitions.iter().filter(|t| t.marked) {
        marked_rate[t.from] += t.rate;
    }
    let lambda = chain.exit.iter().cloned().fold(0.0, f64::max);
    if lambda <= 0.0 || duration <= 0.0 {
        return Ok(0.0);
    }
    let lt = lambda * duration;
    let steps: Vec<(usize, usize, f64)> = chain.transitions.iter().map(|t| (t.from, t.to, t.rate / lambda)).collect();
    let mut v = init;
    let mut next = vec![0.0; chain.n];
    let mut log_w = -lt;
    let mut cdf = 0.0;
    let mut mean = 0.0;
    let max_terms = (lt + 12.0 * lt.sqrt() + 60.0) as usize;
    for j in 0..=max_terms {
        if j > 0 {
            log_w += lt.ln() - (j as f64).ln();
        }
        cdf += log_w.exp();
        let tail = (1.0 - cdf).max(0.0);
        let rate: f64 = v.iter().zip(&marked_rate).map(|(p, m)| p * m).sum();
        mean += rate * tail / lambda;
        if j as f64 > lt && tail < POISSON_TAIL {
            break;
        }
        next.iter_mut().zip(&v).zip(&chain.exit).for_each(|((x, p), e)| *x = p * (1.0 - e / lambda));
        for &(from, to, p) in &steps {
            next[to] += v[from] * p;
        }
        std::mem::swap(&mut v, &mut next);
    }
    Ok(mean)
}

/// Slow exponential mode of a pool of electron levels that is drained by the
/// drive (nuclei ignored).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlowMode {
    /// Decay rate of the pool (µs⁻¹).
    pub rate: f64,
    /// Detected photon rate carried by the slow mode at `t = 0⁺` (µs⁻¹).
    pub amplitude: f64,
}

/// Slowest decay mode of the sub-chain restricted to `pool`, started from
/// `p0` (weights on `pool`, same order).
pub fn pool_slow_mode(rates: &RateModel, drive: &Drive, pool: &[ElectronLevel], p0: &[f64]) -> SlowMode {
    let single = RateModel {
        q_nuc: 0.0,
        q_nuc_per_nucleus: None,
        dark_rate: 0.0,
        ..rates.clone()
    };
    let space = FullSpace::new(ActiveNuclei::ONE);
    let q = MarkedChain::register(&single, &space, drive, true).generator();
    let idx: Vec<usize> = pool
        .iter()
        .map(|&l| space.index(l, NuclearConfig::n14(0)).expect("pool level"))
        .collect();
    let k = idx.len();
    let qtt = DMatrix::from_fn(k, k, |a, b| q[(idx[a], idx[b])]);
    let m = match (-qtt).try_inverse() {
        Some(m) => m,
        None => return SlowMode { rate: 0.0, amplitude: 0.0 },
    };
    let power = |mat: &DMatrix<f64>| {
        let mut x = DVector::from_element(k, 1.0);
        let mut mu = 0.0;
        for _ in 0..500 {
            let y = mat * &x;
            let norm = y.amax();
            if norm == 0.0 {
                break;
            }
            let prev = mu;
            mu = norm;
            x = y / norm;
            if (mu - prev).abs() <= 1e-14 * mu {
                break;
            }
        }
        (mu, x)
    };
    let (mu, r) = power(&m);
    let (_, l) = power(&m.transpose());
    let p0v = DVector::from_column_slice(p0);
    let ex_pos = pool.iter().position(|&l| l == ElectronLevel::ExcitedEx);
    let a1_pos = pool.iter().position(|&l| l == ElectronLevel::ExcitedA1);
    let lr = l.dot(&r);
    let occupancy = |pos: Option<usize>| pos.map_or(0.0, |p| p0v.dot(&r) * l[p] / lr);
    let amplitude = rates.eta * rates.gamma_rad * (occupancy(ex_pos) + occupancy(a1_pos));
    SlowMode { rate: 1.0 / mu, amplitude }
}

/// Bright pool `{ms=0, Ex, singlet}` under Ex illumination.
pub fn ex_slow_mode(rates: &RateModel, power: f64) -> SlowMode {
    pool_slow_mode(
        rates,
        &Drive::ex(power),
        &[ElectronLevel::Ground(Ms::Zero), ElectronLevel::ExcitedEx, ElectronLevel::Singlet],
        &[1.0, 0.0, 0.0],
    )
}

/// Pool `{ms=±1, A1, singlet}` under A1 illumination.
pub fn a1_slow_mode(rates: &RateModel, power: f64) -> SlowMode {
    pool_slow_mode(
        rates,
        &Drive::a1(power),
        &[
            ElectronLevel::Ground(Ms::Minus),
            ElectronLevel::Ground(Ms::Plus),
            ElectronLevel::ExcitedA1,
            ElectronLevel::Singlet,
        ],
        &[0.5, 0.5, 0.0, 0.0],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state(r: f64, gamma: f64) -> MarkedChain {
        // 0 = bright (marked self-loop at r, flips to dark at gamma), 1 = dark
        MarkedChain::new(
            2,
            vec![
                Transition { from: 0, to: 0, rate: r, marked: true },
                Transition { from: 0, to: 1, rate: gamma, marked: false },
            ],
        )
    }

    #[test]
    fn first_detection_race_closed_form() {
        let (r, g, t) = (0.74, 0.12346, 100.0);
        let law = propagate_counts(&two_state(r, g), &[1.0, 0.0], t, 80);
        let p0 = law.count_marginal()[0];
        let closed = (g + r * (-(g + r) * t).exp()) / (g + r);
        assert!((p0 - closed).abs() < 1e-9, "{p0} vs {closed}");
        assert!((closed - 0.1430).abs() < 5e-4);
    }

    #[test]
    fn counts_of_pure_poisson() {
        let law = propagate_counts(&two_state(2.0, 0.0), &[1.0, 0.0], 3.0, 40);
        let mu: f64 = 6.0;
        let mut p = (-mu).exp();
        for (k, &q) in law.count_marginal().iter().enumerate().take(20) {
            assert!((q - p).abs() < 1e-10, "k={k}");
            p *= mu / (k + 1) as f64;
        }
    }

    #[test]
    fn mass_is_conserved_with_overflow() {
        let m = RateModel::default();
        let space = FullSpace::new(ActiveNuclei::ONE);
        let chain = MarkedChain::register(&m, &space, &Drive::ex(4.0), true);
        let init = space.point(&RegisterState::ground(Ms::Zero, NuclearConfig::n14(0))).unwrap();
        let law = propagate_counts(&chain, &init, 20.0, 3);
        let total: f64 = law.count_marginal().iter().sum::<f64>() + law.remainder();
        assert!((total - 1.0).abs() < 1e-10);
        let d = count_distribution_from(&law);
        assert!(d.warning.is_some());
    }

    #[test]
    fn dark_start_without_leak_never_clicks() {
        let m = RateModel {
            leak_dark_max: 0.0,
            ..RateModel::default()
        };
        let s = RegisterState::ground(Ms::Minus, NuclearConfig::n14(1));
        let d = exact_count_distribution(&m, ActiveNuclei::ONE, &s, &Drive::ex(4.0), 100.0, 10).unwrap();
        assert!((d.probs[0] - 1.0).abs() < 1e-12);
        assert!(d.warning.is_none());
    }

    #[test]
    fn relaxation_rows_are_stochastic() {
        let m = RateModel {
            q_nuc: 0.1,
            ..RateModel::default()
        };
        let space = FullSpace::new(ActiveNuclei::THREE);
        let r = relaxation_matrix(&m, &space);
        for i in 0..space.len() {
            let s: f64 = r.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn mean_counts_match_distribution() {
        let m = RateModel::default();
        let s = RegisterState::ground(Ms::Zero, NuclearConfig::n14(0));
        let d = exact_count_distribution(&m, ActiveNuclei::ONE, &s, &Drive::ex(2.0), 10.0, 200).unwrap();
        let mean = exact_mean_counts(&m, ActiveNuclei::ONE, &s, &Drive::ex(2.0), 10.0).unwrap();
        assert!(d.remainder < 1e-10);
        assert!((d.mean_lower_bound() - mean).abs() < 1e-8);
    }

    #[test]
    fn steady_state_balances_flow() {
        let m = RateModel::default();
        let space = FullSpace::new(ActiveNuclei::ONE);
        let chain = MarkedChain::register(&m, &space, &Drive::ex(3.0), true);
        let init = space.point(&RegisterState::ground(Ms::Zero, NuclearConfig::n14(0))).unwrap();
        let pi = steady_state(&chain, &init).unwrap();
        let absorbing = MarkedChain::register(&RateModel { leak_dark_max: 0.0, ..m.clone() }, &space, &Drive::ex(3.0), true);
        let split = steady_state(&absorbing, &init).unwrap();
        let c = NuclearConfig::n14(0);
        let minus = space.index(ElectronLevel::Ground(Ms::Minus), c).unwrap();
        let plus = space.index(ElectronLevel::Ground(Ms::Plus), c).unwrap();
        assert!((split[minus] + split[plus] - 1.0).abs() < 1e-12);
        assert!((split[minus] - split[plus]).abs() < 1e-9);
        let q = chain.generator();
        let flow = DVector::from_vec(pi.clone()).transpose() * q;
        assert!(flow.amax() < 1e-9);
        assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
