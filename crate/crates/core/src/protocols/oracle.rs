//! Exact protocol statistics over the ground space.
//!
//! Every illuminated segment followed by lasers-off relaxation is a family
//! of count-resolved `G × G` transfer matrices (`G = 3F` ground states);
//! pulses are stochastic `G × G` matrices. Protocol laws are then products
//! and sums of these, acting on row vectors stored as columns (`v' = Kᵀ v`).

use nalgebra::{DMatrix, DVector};

use super::nuclear::{Herald, HeraldMode, NuclearReadout};
use super::Setup;
use crate::config::Polarity;
use crate::dynamics::exact::{propagate_counts, relaxation_matrix, FullSpace, MarkedChain};
use crate::dynamics::{Drive, RateModel};
use crate::error::{Error, Result};
use crate::gates::{mw_pulse_law, rf_pulse_law, PulseLaw, PulseParams};
use crate::register::{HyperfineModel, Ms, NuclearConfig, RegisterState};

/// Count-resolved transfer matrices; the last bin holds `≥ cap` counts.
#[derive(Debug, Clone)]
pub struct CountKernel {
    pub by_count: Vec<DMatrix<f64>>,
}

impl CountKernel {
    pub fn cap(&self) -> usize {
        self.by_count.len() - 1
    }

    pub fn marginal(&self) -> DMatrix<f64> {
        self.range(0, self.by_count.len())
    }

    /// Sum over counts in `[lo, hi)`.
    fn range(&self, lo: usize, hi: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.by_count[0].nrows(), self.by_count[0].ncols());
        for k in &self.by_count[lo..hi.min(self.by_count.len())] {
            m += k;
        }
        m
    }

    pub fn below(&self, threshold: usize) -> DMatrix<f64> {
        assert!(threshold <= self.cap(), "threshold beyond kernel cap");
        self.range(0, threshold)
    }

    pub fn at_least(&self, threshold: usize) -> DMatrix<f64> {
        assert!(threshold <= self.cap(), "threshold beyond kernel cap");
        self.range(threshold, self.by_count.len())
    }

    /// Kernel of `M` followed by this segment.
    pub fn after(&self, m: &DMatrix<f64>) -> CountKernel {
        CountKernel { by_count: self.by_count.iter().map(|k| m * k).collect() }
    }
}

/// Count-resolved sub-probability vectors; the last bin holds `≥ cap`.
#[derive(Debug, Clone)]
pub struct CountedVector {
    pub bins: Vec<DVector<f64>>,
}

impl CountedVector {
    pub fn new(v: DVector<f64>, cap: usize) -> Self {
        let mut bins = vec![DVector::zeros(v.len()); cap + 1];
        bins[0] = v;
        CountedVector { bins }
    }

    pub fn cap(&self) -> usize {
        self.bins.len() - 1
    }

    /// Add the counts of one segment.
    pub fn apply(&self, k: &CountKernel) -> CountedVector {
        let cap = self.cap();
        let mut bins = vec![DVector::zeros(k.by_count[0].ncols()); cap + 1];
        for (a, v) in self.bins.iter().enumerate() {
            if v.iter().all(|&x| x == 0.0) {
                continue;
            }
            for (c, m) in k.by_count.iter().enumerate() {
                bins[(a + c).min(cap)] += m.tr_mul(v);
            }
        }
        CountedVector { bins }
    }

    pub fn count_probabilities(&self) -> Vec<f64> {
        self.bins.iter().map(|v| v.sum()).collect()
    }

    pub fn state_marginal(&self) -> DVector<f64> {
        self.bins.iter().fold(DVector::zeros(self.bins[0].len()), |a, b| a + b)
    }
}

/// Exact machinery for one register.
#[derive(Debug, Clone)]
pub struct Oracle {
    pub space: FullSpace,
    pub rates: RateModel,
    relax: DMatrix<f64>,
}

impl Oracle {
    pub fn new(rates: &RateModel, hyperfine: &HyperfineModel) -> Self {
        let space = FullSpace::new(hyperfine.active_nuclei);
        let relax = relaxation_matrix(rates, &space);
        Oracle { space, rates: rates.clone(), relax }
    }

    pub fn n_ground(&self) -> usize {
        self.space.n_ground()
    }

    pub fn ground_state(&self, i: usize) -> RegisterState {
        self.space.state(i)
    }

    pub fn ground_index(&self, s: &RegisterState) -> Result<usize> {
        match s.electron.ground() {
            Some(_) => self
                .space
                .index(s.electron, s.nuclei)
                .ok_or_else(|| Error::Config(format!("{} is outside the register", s.nuclei))),
            None => Err(Error::Sequencing("exact protocol law needs a ground-state electron".into())),
        }
    }

    pub fn point(&self, s: &RegisterState) -> Result<DVector<f64>> {
        let mut v = DVector::zeros(self.n_ground());
        v[self.ground_index(s)?] = 1.0;
        Ok(v)
    }

    /// Electron in `ms`, nuclei uniformly mixed.
    pub fn unpolarized(&self, ms: Ms) -> DVector<f64> {
        let nc = self.space.n_configs();
        let mut v = DVector::zeros(self.n_ground());
        for c in 0..nc {
            v[ms.index() * nc + c] = 1.0 / nc as f64;
        }
        v
    }

    /// Illuminate for `duration`, then relax; counts up to `cap`.
    pub fn segment(&self, drive: &Drive, duration: f64, cap: usize) -> CountKernel {
        let g = self.n_ground();
        let n = self.space.len();
        let chain = MarkedChain::register(&self.rates, &self.space, drive, true);
        let mut by_count = vec![DMatrix::zeros(g, g); cap + 1];
        for i in 0..g {
            let mut init = vec![0.0; n];
            init[i] = 1.0;
            let law = propagate_counts(&chain, &init, duration, cap);
            for (c, row) in law.by_count.iter().enumerate() {
                let mut full = DVector::from_column_slice(row);
                if c == cap {
                    full += DVector::from_column_slice(&law.overflow);
                }
                let ground = self.relax.tr_mul(&full);
                by_count[c].set_row(i, &ground.transpose());
            }
        }
        CountKernel { by_count }
    }

    /// Count-free transfer of a pump.
    pub fn pump(&self, drive: &Drive, duration: f64) -> DMatrix<f64> {
        self.segment(drive, duration, 0).by_count.swap_remove(0)
    }

    /// Stochastic matrix of a state-dependent discrete law.
    pub fn law_matrix<F>(&self, f: F) -> Result<DMatrix<f64>>
    where
        F: Fn(&RegisterState) -> Result<Vec<(RegisterState, f64)>>,
    {
        let g = self.n_ground();
        let mut m = DMatrix::zeros(g, g);
        for i in 0..g {
            for (s, p) in f(&self.ground_state(i))? {
                if p != 0.0 {
                    m[(i, self.ground_index(&s)?)] += p;
                }
            }
        }
        Ok(m)
    }

    pub fn pulse_matrix<F>(&self, f: F) -> Result<DMatrix<f64>>
    where
        F: Fn(&RegisterState) -> Result<PulseLaw>,
    {
        self.law_matrix(|s| Ok(f(s)?.outcomes().to_vec()))
    }

    pub fn mw_matrix(&self, pulse: &PulseParams, model: &HyperfineModel) -> Result<DMatrix<f64>> {
        self.pulse_matrix(|s| mw_pulse_law(s, pulse, model))
    }

    pub fn rf_matrix(&self, pulse: &PulseParams, model: &HyperfineModel) -> Result<DMatrix<f64>> {
        self.pulse_matrix(|s| rf_pulse_law(s, pulse, model))
    }

    /// Mass of `v` on nuclear configuration `target`, any electron state.
    pub fn config_mass(&self, v: &DVector<f64>, target: NuclearConfig) -> f64 {
        let nc = self.space.n_configs();
        (0..v.len()).filter(|&i| self.space.config(i % nc) == target).map(|i| v[i]).sum()
    }
}

/// Result of an exact heralded preparation.
#[derive(Debug, Clone)]
pub struct HeraldLaw {
    /// Post-herald distribution (normalized).
    pub state: DVector<f64>,
    /// Probability of heralding within the attempt cap.
    pub success: f64,
    /// Success probability of one attempt from the initial state.
    pub first_attempt_success: f64,
}

/// Transfer matrices of one herald attempt: `(success, failure)`.
pub fn herald_attempt(oracle: &Oracle, setup: &Setup, herald: &Herald) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let p = setup.protocol;
    let pump = match herald.mode {
        HeraldMode::Target => oracle.pump(&Drive::ex(p.pump_ex_power), p.herald_pump_duration),
        HeraldMode::Complement => oracle.pump(&Drive::a1(p.pump_a1_power), p.pump_a1_duration),
    };
    let pulse = oracle.pulse_matrix(|s| herald.gate.law(s, setup.hyperfine))?;
    let read = oracle.segment(&Drive::ex(p.herald_power), p.herald_window, 1);
    let pre = &pump * &pulse;
    let s_ok = &pre * read.at_least(1);
    let s_fail = &pre * read.below(1);
    let g = oracle.n_ground();
    let mut success = DMatrix::identity(g, g);
    let mut failure = DMatrix::zeros(g, g);
    for _ in 0..herald.repetitions {
        failure += &success * &s_fail;
        success *= &s_ok;
    }
    Ok((success, failure))
}

/// Law after a successful attempt from `v0`. Attempts are independent
/// restarts, so this is the normalized single-attempt success law; the
/// success probability within the attempt cap is `1 − (1 − s)^max`.
pub fn herald_law(oracle: &Oracle, setup: &Setup, herald: &Herald, v0: &DVector<f64>) -> Result<HeraldLaw> {
    let (a, _) = herald_attempt(oracle, setup, herald)?;
    let out = a.tr_mul(v0);
    let s = out.sum();
    if !(s > 0.0) {
        return Err(Error::Estimation("herald never succeeds".into()));
    }
    let max = setup.protocol.herald_max_attempts as f64;
    Ok(HeraldLaw { state: out / s, success: 1.0 - (1.0 - s).powf(max), first_attempt_success: s })
}

/// Count kernel of one nuclear-readout cycle (pump, mapping, short read).
pub fn readout_cycle(oracle: &Oracle, setup: &Setup, readout: &NuclearReadout, cap: usize) -> Result<CountKernel> {
    let p = setup.protocol;
    let pump = oracle.pump(&Drive::ex(p.pump_ex_power), p.nuclear_pump_duration);
    let map = oracle.law_matrix(|s| readout.mapping_distribution(s, setup.hyperfine))?;
    let read = oracle.segment(&Drive::ex(p.nuclear_step_power), p.nuclear_step_duration, cap);
    Ok(read.after(&(pump * map)))
}

/// `P(declared in-target)` after `k` cycles from `v`.
pub fn readout_in_target(cycle: &CountKernel, readout: &NuclearReadout, k: u32, v: &DVector<f64>) -> f64 {
    let cap = cycle.cap();
    assert!(readout.threshold as usize <= cap);
    let mut w = CountedVector::new(v.clone(), cap);
    for _ in 0..k {
        w = w.apply(cycle);
    }
    let probs = w.count_probabilities();
    let total: f64 = probs.iter().sum();
    let below: f64 = probs[..readout.threshold as usize].iter().sum();
    match readout.polarity {
        Polarity::DarkOnTarget => below / total,
        Polarity::BrightOnTarget => 1.0 - below / total,
    }
}

/// Average fidelity of a nuclear readout after heralded preparation of the
/// target and of its complement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NuclearFidelity {
    pub target: f64,
    pub other: f64,
    pub average: f64,
}

impl NuclearFidelity {
    fn new(target: f64, other: f64) -> Self {
        NuclearFidelity { target, other, average: 0.5 * (target + other) }
    }
}

/// Single-nucleus benchmark: herald the target (`p` repetitions) or its
/// complement, then read with `k` cycles.
pub fn heralded_readout_fidelity(
    setup: &Setup,
    target: NuclearConfig,
    p: u32,
    k: u32,
    threshold: u32,
    polarity: Polarity,
) -> Result<NuclearFidelity> {
    let oracle = Oracle::new(setup.rates, setup.hyperfine);
    let v0 = oracle.unpolarized(Ms::Zero);
    let on = herald_law(&oracle, setup, &Herald::new(setup, target, p, HeraldMode::Target)?, &v0)?;
    let off = herald_law(&oracle, setup, &Herald::new(setup, target, p, HeraldMode::Complement)?, &v0)?;
    let readout = NuclearReadout::new(setup, target, k, threshold, polarity)?;
    let cycle = readout_cycle(&oracle, setup, &readout, threshold as usize)?;
    Ok(NuclearFidelity::new(
        readout_in_target(&cycle, &readout, k, &on.state),
        1.0 - readout_in_target(&cycle, &readout, k, &off.state),
    ))
}

/// Post-selected preparation by `prep_steps` dark-on-target readout cycles:
/// zero total counts keeps the target; `≥ 2` counts in every step keeps the
/// other configurations. Then `k` cycles with `threshold`.
pub fn postselected_readout_fidelity(
    setup: &Setup,
    target: NuclearConfig,
    prep_steps: u32,
    k: u32,
    threshold: u32,
) -> Result<NuclearFidelity> {
    let oracle = Oracle::new(setup.rates, setup.hyperfine);
    let readout = NuclearReadout::new(setup, target, k, threshold, Polarity::DarkOnTarget)?;
    let cycle = readout_cycle(&oracle, setup, &readout, (threshold as usize).max(OTHER_STEP_COUNTS as usize))?;
    let keep_target = cycle.below(1);
    let keep_other = cycle.at_least(OTHER_STEP_COUNTS as usize);
    let mut on = oracle.unpolarized(Ms::Zero);
    let mut off = on.clone();
    for _ in 0..prep_steps {
        on = keep_target.tr_mul(&on);
        off = keep_other.tr_mul(&off);
    }
    Ok(NuclearFidelity::new(
        readout_in_target(&cycle, &readout, k, &on),
        1.0 - readout_in_target(&cycle, &readout, k, &off),
    ))
}

/// Per-step count required to keep a shot as "other" during post-selected
/// preparation.
pub const OTHER_STEP_COUNTS: u32 = 2;

/// Find `q_nuc` such that the heralded single-nucleus readout hits
/// `target_fidelity`. The fidelity falls monotonically with `q`.
pub fn calibrate_q_nuc(
    rates: &RateModel,
    hyperfine: &HyperfineModel,
    protocol: &crate::config::ProtocolConfig,
    target: NuclearConfig,
    p: u32,
    k: u32,
    target_fidelity: f64,
) -> Result<f64> {
    let fidelity = |q: f64| -> Result<f64> {
        let mut r = rates.clone();
        r.q_nuc = q;
        r.q_nuc_per_nucleus = None;
        let setup = Setup::new(&r, hyperfine, protocol);
        Ok(heralded_readout_fidelity(&setup, target, p, k, protocol.nuclear_threshold, protocol.polarity)?.average)
    };
    let f0 = fidelity(0.0)?;
    if f0 < target_fidelity {
        return Err(Error::Calibration {
            message: format!("fidelity {f0:.4} without back-action is already below {target_fidelity}"),
            worst_residual: target_fidelity - f0,
        });
    }
    let (mut lo, mut hi) = (0.0, 1e-3);
    while fidelity(hi)? > target_fidelity {
        lo = hi;
        hi *= 2.0;
        if hi > 0.5 {
            return Err(Error::Calibration {
                message: "no back-action strength reaches the fidelity target".into(),
                worst_residual: f64::NAN,
            });
        }
    }
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if fidelity(mid)? > target_fidelity {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-7 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Joint law `P(R1 declared, R2 declared)` of a split continuous readout;
/// index 0 = `ms = 0` (counts ≥ threshold), 1 = `ms = ±1`.
pub fn two_segment_joint(
    rates: &RateModel,
    hyperfine: &HyperfineModel,
    state: &RegisterState,
    division: f64,
    total: f64,
    power: f64,
    threshold: u32,
) -> Result<[[f64; 2]; 2]> {
    let space = FullSpace::new(hyperfine.active_nuclei);
    let chain = MarkedChain::register(rates, &space, &Drive::ex(power), state.charge_ok);
    let init = space.point(state)?;
    let cap = threshold as usize;
    let first = propagate_counts(&chain, &init, division, cap);
    let mut joint = [[0.0; 2]; 2];
    for (c1, row) in first.by_count.iter().enumerate() {
        let mut mid = row.clone();
        if c1 == cap {
            for (a, b) in mid.iter_mut().zip(&first.overflow) {
                *a += b;
            }
        }
        if mid.iter().all(|&x| x == 0.0) {
            continue;
        }
        let second = propagate_counts(&chain, &mid, total - division, cap);
        let probs = second.count_marginal();
        let p2_dark: f64 = probs[..cap].iter().sum();
        let p2_all: f64 = mid.iter().sum();
        let r1 = usize::from(c1 < cap);
        joint[r1][1] += p2_dark;
        joint[r1][0] += p2_all - p2_dark;
    }
    Ok(joint)
}

/// Exact two-qubit pixel: `joint[e][n]` with `e = 0` for electron declared
/// `ms = 0` and `n = 0` for nucleus declared in the target.
pub fn two_qubit_pixel(oracle: &Oracle, plan: &TwoQubitPlan, rf_duration: f64, mw_duration: f64) -> Result<[[f64; 2]; 2]> {
    let rf = oracle.rf_matrix(&plan.rf_pulse(rf_duration), &plan.hyperfine)?;
    let mw = oracle.mw_matrix(&plan.mw_pulse(mw_duration), &plan.hyperfine)?;
    let v = mw.tr_mul(&rf.tr_mul(&plan.init));
    let bright = plan.electron_read.at_least(plan.electron_threshold as usize).tr_mul(&v);
    let dark = plan.electron_read.below(plan.electron_threshold as usize).tr_mul(&v);
    let mut joint = [[0.0; 2]; 2];
    for (e, w) in [bright, dark].iter().enumerate() {
        let p_target = readout_in_target(&plan.cycle, &plan.readout, plan.steps, w);
        let mass = w.sum();
        joint[e][0] = mass * p_target;
        joint[e][1] = mass * (1.0 - p_target);
    }
    Ok(joint)
}

/// Precomputed exact pieces of the two-qubit experiment.
#[derive(Debug, Clone)]
pub struct TwoQubitPlan {
    pub hyperfine: HyperfineModel,
    pub init: DVector<f64>,
    pub electron_read: CountKernel,
    pub electron_threshold: u32,
    pub readout: NuclearReadout,
    pub cycle: CountKernel,
    pub steps: u32,
    pub rf_rabi: f64,
    pub mw_rabi: f64,
    pub mw_carrier: f64,
}

impl TwoQubitPlan {
    pub fn new(oracle: &Oracle, setup: &Setup) -> Result<Self> {
        let p = setup.protocol;
        let target = NuclearConfig::n14(-1);
        let herald = Herald::new(setup, target, p.herald_repetitions, HeraldMode::Target)?;
        let heralded = herald_law(oracle, setup, &herald, &oracle.unpolarized(Ms::Zero))?;
        let cleanup = oracle.pump(&Drive::a1(p.pump_a1_power), p.pump_a1_duration);
        let init = cleanup.tr_mul(&heralded.state);
        let readout = NuclearReadout::new(setup, target, p.two_qubit_steps, p.nuclear_threshold, Polarity::DarkOnTarget)?;
        let cycle = readout_cycle(oracle, setup, &readout, p.nuclear_threshold as usize)?;
        Ok(TwoQubitPlan {
            hyperfine: setup.hyperfine.clone(),
            init,
            electron_read: oracle.segment(&Drive::ex(p.readout_power), p.electron_readout_duration, p.readout_threshold as usize),
            electron_threshold: p.readout_threshold,
            readout,
            cycle,
            steps: p.two_qubit_steps,
            rf_rabi: p.rf_rabi,
            mw_rabi: p.mw_rabi,
            mw_carrier: super::experiments::two_qubit_carrier(setup),
        })
    }

    pub fn rf_pulse(&self, duration: f64) -> PulseParams {
        PulseParams::rf(0, self.hyperfine.rf_nuclear, self.rf_rabi, duration)
    }

    pub fn mw_pulse(&self, duration: f64) -> PulseParams {
        PulseParams::mw(self.mw_carrier, self.mw_rabi, duration)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ProtocolConfig;

    fn rows_sum_to_one(m: &DMatrix<f64>) -> bool {
        m.row_iter().all(|r| (r.sum() - 1.0).abs() < 1e-10)
    }

    #[test]
    fn segment_kernels_are_stochastic() {
        let o = Oracle::new(&RateModel::default(), &HyperfineModel::nv_b());
        let k = o.segment(&Drive::ex(1.0), 20.0, 3);
        assert!(rows_sum_to_one(&k.marginal()));
        let a1 = o.pump(&Drive::a1(7.4), 10.0);
        assert!(rows_sum_to_one(&a1));
    }

    #[test]
    fn counted_vector_matches_single_long_segment() {
        // a dark start without leak never clicks
        let mut r = RateModel::default();
        r.leak_dark_max = 0.0;
        let o = Oracle::new(&r, &HyperfineModel::nv_b());
        let k = o.segment(&Drive::ex(1.0), 10.0, 4);
        let v = o.point(&RegisterState::ground(Ms::Minus, NuclearConfig::n14(0))).unwrap();
        let w = CountedVector::new(v, 4).apply(&k).apply(&k);
        assert!((w.count_probabilities()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn herald_without_backaction_is_pure_with_ideal_pieces() {
        let mut r = RateModel::default();
        r.q_nuc = 0.0;
        r.leak_bright_max = 0.0;
        r.leak_dark_max = 0.0;
        r.p_mix_ex = 0.0;
        let mut h = HyperfineModel::nv_b();
        h.zeeman_split = 400.0;
        let pc = ProtocolConfig { selective_rabi: 0.01, ..ProtocolConfig::default() };
        let setup = Setup::new(&r, &h, &pc);
        let o = Oracle::new(&r, &h);
        let herald = Herald::new(&setup, NuclearConfig::n14(-1), 1, HeraldMode::Target).unwrap();
        // no pump-out from ms = 0 here, so start in ms = −1
        let mut v0 = DVector::zeros(o.n_ground());
        for c in 0..3 {
            v0[c] = 1.0 / 3.0;
        }
        let law = herald_law(&o, &setup, &herald, &v0).unwrap();
        // residual off-resonant leakage at Ω = 0.01 is ~2e-5
        assert!(o.config_mass(&law.state, NuclearConfig::n14(-1)) > 1.0 - 1e-4);
    }

    #[test]
    fn herald_never_lowers_target_population() {
        let r = RateModel { q_nuc: 0.002, ..RateModel::default() };
        let h = HyperfineModel::nv_b();
        let pc = ProtocolConfig::default();
        let setup = Setup::new(&r, &h, &pc);
        let o = Oracle::new(&r, &h);
        let v0 = o.unpolarized(Ms::Zero);
        // only the outer mI = −1 line is free of a cross-branch coincidence
        {
            let t = -1;
            let herald = Herald::new(&setup, NuclearConfig::n14(t), 1, HeraldMode::Target).unwrap();
            let law = herald_law(&o, &setup, &herald, &v0).unwrap();
            assert!(o.config_mass(&law.state, NuclearConfig::n14(t)) >= o.config_mass(&v0, NuclearConfig::n14(t)));
        }
    }

    #[test]
    fn two_segment_joint_sums_to_one() {
        let r = RateModel::default();
        let h = HyperfineModel::nv_b();
        let s = RegisterState::ground(Ms::Zero, NuclearConfig::n14(0));
        let j = two_segment_joint(&r, &h, &s, 5.0, 40.0, 1.0, 1).unwrap();
        let total: f64 = j.iter().flatten().sum();
        assert!((total - 1.0).abs() < 1e-10);
        // an empty second window never clicks
        let j = two_segment_joint(&r, &h, &s, 40.0, 40.0, 1.0, 1).unwrap();
        assert!(j[0][0] + j[1][0] < 1e-12);
    }
}
