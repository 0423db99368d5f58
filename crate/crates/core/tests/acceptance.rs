//! One test per acceptance criterion. Each prints a single `PASS`/`FAIL`
//! line with the measured values and the pinned tolerance, then asserts.

use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use nvsim::analysis::dwell::dwell_statistics;
use nvsim::analysis::fidelity::{exact_division, optimize_division, optimize_window, optimize_window_exact, simulate_timestamps};
use nvsim::analysis::fit::{fit_cosine, fit_exponential_decay, fit_rabi, linear_least_squares, multi_line_flip, RabiLine};
use nvsim::analysis::spectrum::{esr_spectrum, exact_esr_spectrum, fit_gaussians, line_grid, line_positions, EsrSettings};
use nvsim::config::{Polarity, ProtocolConfig};
use nvsim::dynamics::exact::exact_mean_counts;
use nvsim::dynamics::{calibrate, fluorescence_decay_curve, CalibrationTargets, Drive, RateModel, ReducedModel};
use nvsim::protocols::experiments::{conditioned_rabi, quantum_jump_sweep, two_qubit_experiment, RabiSettings};
use nvsim::protocols::export::pixel_rows;
use nvsim::protocols::oracle::{calibrate_q_nuc, heralded_readout_fidelity, postselected_readout_fidelity, Oracle, TwoQubitPlan};
use nvsim::protocols::{run_shots, Setup};
use nvsim::register::{HyperfineModel, Ms, NuclearConfig, RegisterState};
use nvsim::sequencer::{parse_program, run_program, RunOptions};

/// Calibrated rate model with `q_nuc` fitted to the NV-B nuclear readout.
fn model() -> &'static RateModel {
    static M: OnceLock<RateModel> = OnceLock::new();
    M.get_or_init(|| {
        let mut m = calibrate(&CalibrationTargets::default(), &RateModel::default()).unwrap().model;
        m.q_nuc = calibrate_q_nuc(&m, &HyperfineModel::nv_b(), &ProtocolConfig::default(), NuclearConfig::n14(-1), 2, 3, 0.92).unwrap();
        m
    })
}

fn verdict(id: &str, pass: bool, detail: String, start: Instant) {
    // the stdout handle bypasses libtest capture, so the line shows on success too
    let line = format!("{} criterion {id}: {detail} [{:.1} s]\n", if pass { "PASS" } else { "FAIL" }, start.elapsed().as_secs_f64());
    let _ = std::io::stdout().lock().write_all(line.as_bytes());
    assert!(pass, "criterion {id} failed: {detail}");
}

fn within(x: f64, lo: f64, hi: f64) -> bool {
    (lo..=hi).contains(&x)
}

#[test]
fn c01_calibration_round_trip() {
    let t0 = Instant::now();
    let m = model();
    let bright = RegisterState::ground(Ms::Zero, NuclearConfig::n14(0));
    let dark = RegisterState::ground(Ms::Minus, NuclearConfig::n14(0));
    let ex = fluorescence_decay_curve(m, &bright, &Drive::ex(4.8), 60.0, 0.5, 20_000, 1).unwrap();
    let ex = fit_exponential_decay(&ex.as_points(), true).unwrap();
    let a1 = fluorescence_decay_curve(m, &dark, &Drive::a1(7.4), 3.0, 0.02, 100_000, 2).unwrap();
    let a1 = fit_exponential_decay(&a1.as_points(), true).unwrap();
    let (te, ta) = (ex.decay_time.value, a1.decay_time.value);
    let pass = (te / 8.1 - 1.0).abs() <= 0.05 && (ta / 0.39 - 1.0).abs() <= 0.05;
    verdict(
        "1",
        pass,
        format!("fitted 1/γ0 Ex {te:.3} ± {:.3} µs (8.1 ± 5 %), A1 {ta:.4} ± {:.4} µs (0.39 ± 5 %)", ex.decay_time.se, a1.decay_time.se),
        t0,
    );
}

#[test]
fn c02_readout_histogram() {
    let t0 = Instant::now();
    let (m, h, p) = (model(), HyperfineModel::nv_b(), ProtocolConfig::default());
    let setup = Setup::new(m, &h, &p);
    let n = 10_000;
    let config = NuclearConfig::n14(0);
    let read = |ms: Ms, label: u64| {
        run_shots(n, 21, label, |_, rng| {
            let mut s = RegisterState::ground(ms, config);
            setup.read(&mut s, 100.0, p.readout_power, rng)
        })
    };
    let dark: Vec<u32> = read(Ms::Minus, 1).into_iter().take(n / 2).chain(read(Ms::Plus, 2).into_iter().take(n / 2)).collect();
    let p0 = dark.iter().filter(|&&c| c == 0).count() as f64 / n as f64;
    let bright = read(Ms::Zero, 3);
    let mean = bright.iter().map(|&c| c as f64).sum::<f64>() / n as f64;
    let var = bright.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    let exact = exact_mean_counts(m, h.active_nuclei, &RegisterState::ground(Ms::Zero, config), &Drive::ex(p.readout_power), 100.0).unwrap();
    let pass = (p0 - 0.983).abs() <= 0.005 && (mean / 6.4 - 1.0).abs() <= 0.15 && (mean - exact).abs() <= 2.0 * se;
    verdict(
        "2",
        pass,
        format!("P(0|dark) {p0:.4} (0.983 ± 0.005); bright mean {mean:.3} ± {se:.3} (6.4 ± 15 %), exact {exact:.3} (2 SE)"),
        t0,
    );
}

#[test]
fn c03_window_optimization() {
    let t0 = Instant::now();
    let (m, h, p) = (model(), HyperfineModel::nv_b(), ProtocolConfig::default());
    let setup = Setup::new(m, &h, &p);
    let durations: Vec<f64> = (1..=20).map(|k| 5.0 * k as f64).collect();
    let thresholds = [1, 2, 3, 4];
    let rec = simulate_timestamps(&setup, 100.0, 10_000, 31);
    let r = optimize_window(&rec, &durations, &thresholds).unwrap();
    let c = r.optimizer.unwrap();
    let (ed, et, ef) = optimize_window_exact(&setup, &durations, &thresholds).unwrap();
    let pass = c.threshold == 1 && within(c.duration, 20.0, 60.0) && (r.f_avg.value - 0.932).abs() <= 0.02;
    verdict(
        "3",
        pass,
        format!(
            "threshold {} (1), duration {} µs ([20, 60]), F_avg {:.4} ± {:.4} (0.932 ± 0.02); exact optimum {ed} µs, threshold {et}, F_avg {ef:.4}",
            c.threshold, c.duration, r.f_avg.value, r.f_avg.half_width
        ),
        t0,
    );
}

fn rabi_lines(h: &HyperfineModel, carrier: f64) -> Vec<RabiLine> {
    [-1i8, 0, 1].iter().map(|&m| RabiLine { detuning: h.line_for(NuclearConfig::n14(m), -1) - carrier, weight: 1.0 }).collect()
}

#[test]
fn c04_two_segment_projectiveness() {
    let t0 = Instant::now();
    let (m, h, p) = (model(), HyperfineModel::nv_b(), ProtocolConfig::default());
    let setup = Setup::new(m, &h, &p);
    let divisions: Vec<f64> = (1..=40).map(|k| 0.5 * k as f64).collect();
    let rec = simulate_timestamps(&setup, 100.0, 10_000, 41);
    let r = optimize_division(&rec, &divisions, p.readout_threshold).unwrap();
    let (e1, e2, es) = exact_division(&setup, r.division, 100.0, p.readout_threshold).unwrap();
    let (f1, f2, same) = (r.r1.f_avg.value, r.r2.f_avg.value, r.p_identical.value);

    // conditioned second readout of the Rabi experiment at 15 G
    let h15 = HyperfineModel::nv_b().with_field_gauss(15.0);
    let setup15 = Setup::new(m, &h15, &p);
    let settings = RabiSettings::pinned(&setup15, 0.84).unwrap();
    let durations: Vec<f64> = (0..25).map(|i| 0.1 * i as f64).collect();
    let cr = conditioned_rabi(&setup15, &settings, &durations, 2_000, 42).unwrap();
    let lines = rabi_lines(&h15, settings.carrier);
    let unc = cr.unconditioned();
    let y: Vec<f64> = unc.iter().map(|q| q.value).collect();
    let e: Vec<f64> = unc.iter().map(|q| q.se().max(1e-3)).collect();
    let rabi = fit_rabi(&durations, &y, &e, &lines).unwrap().rabi.value;
    // amplitude of the same oscillation shape in the conditioned curve
    let cond = cr.conditioned();
    let mut x = DMatrix::zeros(durations.len(), 2);
    for (i, &t) in durations.iter().enumerate() {
        x[(i, 0)] = 1.0;
        x[(i, 1)] = multi_line_flip(&lines, rabi, t);
    }
    let yc = DVector::from_iterator(cond.len(), cond.iter().map(|q| q.value));
    let ec: Vec<f64> = cond.iter().map(|q| q.se().max(1e-3)).collect();
    let (b, cov) = linear_least_squares(&x, &yc, &ec).unwrap();
    let (amp, amp_se) = (b[1], cov[(1, 1)].sqrt());

    let pass = within(r.division, 2.0, 10.0)
        && (f1 - 0.834).abs() <= 0.04
        && (f2 - 0.834).abs() <= 0.04
        && (same - 0.82).abs() <= 0.04
        && amp.abs() <= 2.0 * amp_se;
    verdict(
        "4",
        pass,
        format!(
            "division {} µs ([2, 10]), F_R1 {f1:.4}, F_R2 {f2:.4} (0.834 ± 0.04), P(identical) {same:.4} (0.82 ± 0.04); \
             exact {e1:.4}/{e2:.4}/{es:.4}; conditioned-curve MW amplitude {amp:.4} ± {amp_se:.4} (|a| <= 2 SE)",
            r.division
        ),
        t0,
    );
}

fn total_variation(mc: &[u32], exact: &[f64]) -> f64 {
    let n = mc.len() as f64;
    let kmax = mc.iter().copied().max().unwrap_or(0) as usize;
    let mut hist = vec![0.0; kmax.max(exact.len()) + 1];
    for &c in mc {
        hist[c as usize] += 1.0 / n;
    }
    let exact_tail = 1.0 - exact.iter().sum::<f64>();
    let tv: f64 = hist.iter().enumerate().map(|(k, h)| (h - exact.get(k).copied().unwrap_or(0.0)).abs()).sum();
    0.5 * (tv + exact_tail.max(0.0))
}

#[test]
fn c05_oracle_equivalence() {
    let t0 = Instant::now();
    let cases = [
        ("bright", ReducedModel { bright_rate: 0.74, pump_out: 1.0 / 8.1, leak: 1.7e-4 }, 0, 100.0),
        ("dark", ReducedModel { bright_rate: 0.74, pump_out: 1.0 / 8.1, leak: 1.7e-4 }, 1, 100.0),
        ("leaky", ReducedModel { bright_rate: 0.3, pump_out: 0.2, leak: 0.05 }, 1, 40.0),
    ];
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (i, (name, m, start, t)) in cases.iter().enumerate() {
        let exact = m.exact_counts(*start, *t, 80);
        let mc = run_shots(100_000, 51 + i as u64, 0x5456, |_, rng| m.sample_counts(*start, *t, rng));
        let tv = total_variation(&mc, &exact.probs);
        worst = worst.max(tv);
        parts.push(format!("{name} {tv:.4}"));
    }
    verdict("5", worst < 0.01, format!("TV distance at 1e5 shots: {} (< 0.01)", parts.join(", ")), t0);
}

struct RatioCheck {
    mc: f64,
    mc_se: f64,
    exact: f64,
    /// Pearson χ² of the MC spectrum against the exact law, with its point count.
    chi2: f64,
    points: usize,
}

fn spectrum_ratio(setup: &Setup, herald: Option<(NuclearConfig, u32)>, target: NuclearConfig, branch: Option<i8>, offsets: &[f64], shots: usize, seed: u64) -> RatioCheck {
    let h = setup.hyperfine;
    let grid = line_grid(h, branch, offsets, 30);
    let settings = EsrSettings::new(setup, herald);
    let lines = line_positions(h, Some(target), branch);
    let sp = esr_spectrum(setup, &settings, &grid, shots, seed).unwrap();
    let fit = fit_gaussians(&grid, &sp.values(), &sp.errors(), &lines, h.linewidth).unwrap();
    let ratio = fit.ratio.unwrap();
    let exact = exact_esr_spectrum(setup, &settings, &grid).unwrap();
    let efit = fit_gaussians(&grid, &exact, &sp.errors(), &lines, h.linewidth).unwrap();
    let chi2 = sp
        .p_ms0
        .iter()
        .zip(&exact)
        .map(|(y, &p)| (y.value - p).powi(2) * y.n as f64 / (p * (1.0 - p)).max(1e-9))
        .sum();
    RatioCheck { mc: ratio.value, mc_se: ratio.se, exact: efit.ratio.unwrap().value, chi2, points: grid.len() }
}

/// Upper `z`-sigma point of χ²(k), Wilson–Hilferty.
fn chi2_quantile(k: usize, z: f64) -> f64 {
    let k = k as f64;
    let c = 2.0 / (9.0 * k);
    k * (1.0 - c + z * c.sqrt()).powi(3)
}

// The three-spin herald succeeds on only a few percent of attempts, so its MC
// spectrum cannot pin the ratio to ±0.05 at desk scale. The 0.78 bar is taken
// on the exact law of the same protocol and the MC must agree with that law
// point by point.
#[test]
fn c06_nuclear_preparation() {
    let t0 = Instant::now();
    let m = model();
    let (hb, pb) = (HyperfineModel::nv_b(), ProtocolConfig::default());
    let sb = Setup::new(m, &hb, &pb);
    let tb = NuclearConfig::n14(-1);
    let offsets = [-1.0, -0.5, 0.0, 0.5, 1.0];
    let b1 = spectrum_ratio(&sb, Some((tb, 1)), tb, None, &offsets, 300, 61);
    let b2 = spectrum_ratio(&sb, Some((tb, 2)), tb, None, &offsets, 300, 62);

    let (ha, pa) = (HyperfineModel::nv_a(), ProtocolConfig::nv_a());
    let sa = Setup::new(m, &ha, &pa);
    let ta = NuclearConfig::new(-1, 1, 1);
    let settings = |p| EsrSettings::new(&sa, Some((ta, p)));
    let grid = line_grid(&ha, Some(-1), &[-1.0, 0.0, 1.0], 30);
    let lines = line_positions(&ha, Some(ta), Some(-1));
    let exact_ratio = |p| {
        let y = exact_esr_spectrum(&sa, &settings(p), &grid).unwrap();
        let sigma = vec![0.01; y.len()];
        fit_gaussians(&grid, &y, &sigma, &lines, ha.linewidth).unwrap().ratio.unwrap().value
    };
    let (a1x, a2x) = (exact_ratio(1), exact_ratio(2));
    let a2 = spectrum_ratio(&sa, Some((ta, 2)), ta, Some(-1), &[-1.0, 0.0, 1.0], 60, 64);
    let chi2_max = chi2_quantile(a2.points, 3.09);

    let pass = b2.mc >= 0.90 && b2.exact > b1.exact && a2x >= 0.78 && a2x > a1x && a2.chi2 <= chi2_max;
    verdict(
        "6",
        pass,
        format!(
            "¹⁴N ratio p=1 {:.3} ± {:.3} (exact {:.3}), p=2 {:.3} ± {:.3} (exact {:.3}) (MC >= 0.90); \
             three-spin exact ratio p=1 {a1x:.3}, p=2 {a2x:.3} (>= 0.78, improving); \
             three-spin p=2 MC {:.3} ± {:.3}, χ² vs exact {:.1} over {} points (<= {chi2_max:.1})",
            b1.mc, b1.mc_se, b1.exact, b2.mc, b2.mc_se, b2.exact, a2.mc, a2.mc_se, a2.chi2, a2.points
        ),
        t0,
    );
}

#[test]
fn c07_nuclear_readout() {
    let t0 = Instant::now();
    let m = model();
    let (hb, pb) = (HyperfineModel::nv_b(), ProtocolConfig::default());
    let sb = Setup::new(m, &hb, &pb);
    let fb = heralded_readout_fidelity(&sb, NuclearConfig::n14(-1), 2, 3, 1, Polarity::DarkOnTarget).unwrap();
    let (ha, pa) = (HyperfineModel::nv_a(), ProtocolConfig::nv_a());
    let sa = Setup::new(m, &ha, &pa);
    let fa = postselected_readout_fidelity(&sa, NuclearConfig::new(-1, 1, 1), 7, 6, 3).unwrap();

    let mut m0 = m.clone();
    m0.q_nuc = 0.0;
    let s0 = Setup::new(&m0, &hb, &pb);
    let best: Vec<f64> = (1..=8)
        .map(|k| {
            (1..=2 * k)
                .map(|t| heralded_readout_fidelity(&s0, NuclearConfig::n14(-1), 2, k, t, Polarity::DarkOnTarget).unwrap().average)
                .fold(0.0, f64::max)
        })
        .collect();
    let fixed: Vec<f64> =
        (1..=8).map(|k| heralded_readout_fidelity(&s0, NuclearConfig::n14(-1), 2, k, 1, Polarity::DarkOnTarget).unwrap().average).collect();
    let monotone = best.windows(2).all(|w| w[1] >= w[0] - 1e-12);
    let pass = (fb.average - 0.92).abs() <= 0.04 && (fa.average - 0.967).abs() <= 0.02 && monotone;
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ");
    verdict(
        "7",
        pass,
        format!(
            "q_nuc {:.4e}; NV-B F_avg {:.4} (0.92 ± 0.04); NV-A F_avg {:.4} (0.967 ± 0.02); \
             q_nuc = 0 best-threshold F(k=1..8) {} (non-decreasing); threshold-1 F(k) {}",
            m.q_nuc,
            fb.average,
            fa.average,
            fmt(&best),
            fmt(&fixed)
        ),
        t0,
    );
}

#[test]
fn c08_quantum_jumps() {
    let t0 = Instant::now();
    let (m, h, p) = (model(), HyperfineModel::nv_b(), ProtocolConfig::default());
    let setup = Setup::new(m, &h, &p);
    let start = RegisterState::ground(Ms::Zero, NuclearConfig::n14(-1));
    let rabis = [0.02, 0.035, 0.05];
    let traces = quantum_jump_sweep(&setup, &start, &rabis, 50_000.0, 81).unwrap();
    let stats: Vec<_> = traces.iter().map(|t| dwell_statistics(&t.bright, t.bin).unwrap()).collect();
    let dark: Vec<_> = stats.iter().map(|s| s.dark.clone().unwrap()).collect();
    let decreasing = dark.windows(2).all(|w| w[1].mean.value < w[0].mean.value);
    let ks_ok = dark.iter().all(|d| d.p_value > 0.01);
    let parts: Vec<String> = rabis
        .iter()
        .zip(&stats)
        .map(|(o, s)| {
            let d = s.dark.as_ref().unwrap();
            let b = s.bright.as_ref().unwrap();
            format!(
                "Ω {o} MHz: dark {:.1} ± {:.1} µs (n {}, KS p {:.3}), bright {:.1} µs (KS p {:.3})",
                d.mean.value, d.mean.se, d.n, d.p_value, b.mean.value, b.p_value
            )
        })
        .collect();
    verdict("8", decreasing && ks_ok, format!("{}; dark means decreasing, dark KS p > 0.01", parts.join("; ")), t0);
}

#[test]
fn c09_crosstalk_direction() {
    let t0 = Instant::now();
    let (m, h, p) = (model(), HyperfineModel::nv_b(), ProtocolConfig::default());
    let setup = Setup::new(m, &h, &p);
    let rf: Vec<f64> = (0..11).map(|i| 20.0 * i as f64).collect();
    // electron π at the effective Rabi frequency of the midpoint carrier
    let detuning = 0.5 * (h.line_for(NuclearConfig::n14(0), -1) - h.line_for(NuclearConfig::n14(-1), -1));
    let mw = [0.5 / (p.mw_rabi.powi(2) + detuning.powi(2)).sqrt()];
    let table = two_qubit_experiment(&setup, &rf, &mw, 4_000, 91).unwrap();
    let oracle = Oracle::new(m, &h);
    let plan = TwoQubitPlan::new(&oracle, &setup).unwrap();
    let rows = pixel_rows(&table, &oracle, &plan).unwrap();
    let amplitude = |y: Vec<f64>, e: &[f64]| fit_cosine(&rf, &y, e, p.rf_rabi).unwrap().1;
    let se = |k: usize, n: usize| {
        let q = k as f64 / n as f64;
        (q * (1.0 - q) / n as f64).sqrt().max(0.5 / n as f64)
    };
    let e0: Vec<f64> = rows.iter().map(|r| se(r.e0_target, r.e0_target + r.e0_other)).collect();
    let e1: Vec<f64> = rows.iter().map(|r| se(r.e1_target, r.e1_target + r.e1_other)).collect();
    let a0 = amplitude(rows.iter().map(|r| r.p_target_e0).collect(), &e0);
    let a1 = amplitude(rows.iter().map(|r| r.p_target_e1).collect(), &e1);
    let x0 = amplitude(rows.iter().map(|r| r.exact_p_target_e0).collect(), &e0).value;
    let x1 = amplitude(rows.iter().map(|r| r.exact_p_target_e1).collect(), &e1).value;
    let (d, dx) = (a0.value - a1.value, x0 - x1);
    let d_se = (a0.se.powi(2) + a1.se.powi(2)).sqrt();
    let pass = dx < 0.0 && d < 0.0 && (d - dx).abs() <= 2.0 * d_se;
    verdict(
        "9",
        pass,
        format!(
            "nuclear Rabi amplitude | ms=0 {:.4} ± {:.4}, | ms=±1 {:.4} ± {:.4}; difference {d:.4} ± {d_se:.4}, exact {dx:.4} (within 2 SE, ms=0 lower)",
            a0.value, a0.se, a1.value, a1.se
        ),
        t0,
    );
}

#[test]
fn c10_determinism() {
    let t0 = Instant::now();
    let (m, h, p) = (model(), HyperfineModel::nv_b(), ProtocolConfig::default());
    let setup = Setup::new(m, &h, &p);
    let prog = parse_program(
        "NAME det\nPUMP pm1 40us\nMW 2874.0MHz 0.2MHz pi\nREAD 400ns >=1 h 4.8nW\nCONDITION h counts>=1\n\
         PUMP ms0 10us\nREPEAT 3\n  MW 2875.1MHz 1MHz 0.3us\n  READ 15us >=1 e\nEND\nCHECK_CHARGE 0.05\n",
    )
    .unwrap();
    let csv = |threads: Option<usize>| run_program(&prog, &setup, 2_000, 7, RunOptions { threads, strict: false }).unwrap().to_csv().unwrap();
    let base = csv(Some(1));
    let same = [Some(2), Some(4), Some(8), None].iter().all(|&t| csv(t) == base) && csv(Some(1)) == base;
    let other = run_program(&prog, &setup, 2_000, 8, RunOptions::default()).unwrap().to_csv().unwrap();
    verdict(
        "10",
        same && other != base,
        format!("shot tables byte-identical at 1/2/4/8/default threads ({} bytes); a different seed changes them", base.len()),
        t0,
    );
}

#[test]
fn rabi_visibility_band() {
    let t0 = Instant::now();
    let (m, p) = (model(), ProtocolConfig::default());
    let h = HyperfineModel::nv_b().with_field_gauss(15.0);
    let setup = Setup::new(m, &h, &p);
    let settings = RabiSettings::pinned(&setup, 0.84).unwrap();
    let durations: Vec<f64> = (0..25).map(|i| 0.1 * i as f64).collect();
    let cr = conditioned_rabi(&setup, &settings, &durations, 1_000, 101).unwrap();
    let full = cr.full_window();
    let y: Vec<f64> = full.iter().map(|q| q.value).collect();
    let e: Vec<f64> = full.iter().map(|q| q.se().max(1e-3)).collect();
    let f = fit_rabi(&durations, &y, &e, &rabi_lines(&h, settings.carrier)).unwrap();
    let v = f.visibility;
    verdict(
        "Rabi band",
        within(v.value, 0.70, 0.84),
        format!("fitted visibility {:.3} ± {:.3} (consistency band [0.70, 0.84]), Ω {:.3} MHz", v.value, 2.0 * v.se, settings.rabi),
        t0,
    );
}
